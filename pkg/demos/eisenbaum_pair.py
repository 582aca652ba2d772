"""Eisenbaum identity on the pair graph with a fitted inner expectation.

The inner expectation z -> E_{a,z}[e^{-<k,L-1>}] has no closed form here. It
is estimated with common random numbers on a Chebyshev grid in 1/z and fitted,
so the fit can be expanded in the nilpotent soul of z. Takes about a minute.
"""

from vrjpiso.graph import pair
from vrjpiso.isomorph import verify_eisenbaum

rep = verify_eisenbaum(pair(1.0, 1.0), 0, 1.0, 0.5, paths=4000, degree=8, seed=0)
print(rep.line())
print(f"fit residual {rep.extra['residual']:.2e}, largest CRN standard error {rep.extra['max_stderr']:.2e}")
