"""VRJP killed at the cemetery against h<x_a x_b e^{-<k,z-1>}> on the pair graph.

The left column is a Monte Carlo mean over killed VRJP paths, the right one
a 4D super-quadrature; they should agree within a few standard errors.
"""

import sys

from vrjpiso.graph import pair
from vrjpiso.isomorph import verify_bfs_dynkin

paths = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
g = pair(1.0, 1.0)
for k in [0.0, 0.25, 0.5, 1.0, 2.0]:
    rep = verify_bfs_dynkin(g, 0, 1, [k, k], paths=paths, seed=1)
    print(f"k={k:<5} MC {rep.lhs:.5f} ± {rep.lhs_err:.5f}   quadrature {rep.rhs:.6f}   z={rep.statistic:+.2f}")
