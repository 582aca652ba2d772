"""Pinned H22 and free-field expectations of Laplace observables.

Every value printed should be 1: pinning δ at the zero vector makes both
models localize onto the value of the observable at the origin.
"""

from vrjpiso.graph import augmented_laplacian, pair, single_vertex
from vrjpiso.isomorph import h22_quad
from vrjpiso.susy import BoundaryCondition, free_expectation, h22_expectation, laplace_z, laplace_z2

for g in [single_vertex(1.0), pair(1.0, 1.0)]:
    verts = list(range(g.n))
    a = augmented_laplacian(g)
    for k in [0.3, 1.0, 2.0]:
        hyp = h22_expectation(laplace_z(k, verts), g, BoundaryCondition(), quad=h22_quad(g.n), y_symmetric=True)
        free = free_expectation(laplace_z2(k, verts), a, pinned=g.delta, y_symmetric=True)
        print(f"{g.name:<8} k={k:<4} <e^-k(z-1)> = {hyp:.10f}   [[e^-k(z^2-1)]] = {free:.10f}")
