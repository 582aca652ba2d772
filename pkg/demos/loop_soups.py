"""Loop soup occupation fields: quenched at fixed u, then annealed over ν.

Quenched soups are compared with the determinant ratio det L / det(L + k);
the annealed (reinforced) soup with <e^{-k(x^2+y^2)}> of the H22 model.
"""

import numpy as np

from vrjpiso.graph import single_vertex
from vrjpiso.isomorph import verify_soup
from vrjpiso.loopsoup import loop_generator, sample_occupations

g = single_vertex(1.0)
occ = sample_occupations(loop_generator(g), 1.0, 100_000, np.random.default_rng(0))
print(f"single vertex, alpha=1: mean occupation {occ.mean():.4f} (Exponential with mean 2)")

for u in ([0.0, 0.0], [0.7, 0.0], [-0.7, 0.0]):
    rep = verify_soup("quenched", g, 0.5, u=u, count=100_000, seed=2)
    print(f"quenched u={u}: MC {rep.lhs:.5f} ± {rep.lhs_err:.5f}  det ratio {rep.rhs:.5f}")

rep = verify_soup("reinforced", g, 0.5, count=50_000, seed=3)
print(f"reinforced: MC {rep.lhs:.5f} ± {rep.lhs_err:.5f}  H22 quadrature {rep.rhs:.5f}  z={rep.statistic:+.2f}")
