import math

import numpy as np
import pytest

from vrjpiso.graph import augmented_laplacian, pair, single_vertex
from vrjpiso.isomorph import h22_quad
from vrjpiso.susy import (BoundaryCondition, SusyError, boost, free_expectation, h22_energy, h22_expectation,
                          h22_field, laplace_square, laplace_z, laplace_z2, rotate, times_x)


def one(field):
    return 1.0


def test_pinned_values():
    assert BoundaryCondition(s=0.0).h22_value() == (0.0, 0.0, 1.0)
    s = 0.8
    assert BoundaryCondition(s=s).h22_value() == (math.sinh(s), 0.0, math.cosh(s))
    assert BoundaryCondition(s=s).free_value() == (math.sinh(s), 0.0)
    assert boost((0.0, 0.0, 1.0), s) == pytest.approx((math.sinh(s), 0.0, math.cosh(s)))


def test_boost_and_rotation_points(rng):
    pt = tuple(rng.normal(size=3))
    assert boost(pt, 0.0) == pytest.approx(pt)
    x, y, z = 0.3, -1.2, 5.0
    assert rotate((x, y, z), math.pi / 2) == pytest.approx((y, -x, z))
    rx, ry, _ = rotate((x, y, z), 0.77)
    assert rx * rx + ry * ry == pytest.approx(x * x + y * y)


def test_energy_vanishes_at_zero_vector():
    g = pair(1.0, 0.5)
    f = h22_field(g, BoundaryCondition(), np.zeros((1, 2)), np.zeros((1, 2)))
    e = h22_energy(f, g)
    np.testing.assert_allclose(e.body, 0.0, atol=1e-15)
    odd = [c for c in range(16) if bin(c).count("1") % 2]
    np.testing.assert_array_equal(e.coeffs[..., odd], 0.0)


def test_single_vertex_energy_body(rng):
    h = 1.3
    g = single_vertex(h)
    x, y = rng.normal(size=(2, 5, 1))
    f = h22_field(g, BoundaryCondition(), x, y)
    z = np.sqrt(1 + x[:, 0] ** 2 + y[:, 0] ** 2)
    # pinned δ at the zero vector: -Σ_i W_δi (1 - z_i), i.e. half of -2h(1 - z)
    np.testing.assert_allclose(h22_energy(f, g).body, h * (z - 1), rtol=1e-13)


def test_energy_boost_invariant(rng):
    g = pair(1.0, 0.7)
    x, y = rng.normal(size=(2, 20, 2))
    f = h22_field(g, BoundaryCondition(), x, y)
    e0, e1 = h22_energy(f, g), h22_energy(f.boosted(0.9), g)
    np.testing.assert_allclose(e1.coeffs, e0.coeffs, atol=1e-10)
    e2 = h22_energy(f.rotated(0.4), g)
    np.testing.assert_allclose(e2.coeffs, e0.coeffs, atol=1e-10)


def test_field_body_finite_and_even(rng):
    g = pair(1.0, 0.7)
    f = h22_field(g, BoundaryCondition(s=0.4), *rng.normal(size=(2, 3, 2)))
    for z in f.z:
        assert np.all(np.isfinite(z.body)) and z.is_even()


@pytest.mark.parametrize("k", [0.0, 1.0])
def test_h22_normalization_single(k):
    val = h22_expectation(laplace_z(k, [0]), single_vertex(1.0), BoundaryCondition(), y_symmetric=True)
    assert val == pytest.approx(1.0, rel=1e-7)


def test_h22_normalization_pair():
    val = h22_expectation(one, pair(1.0, 1.0), BoundaryCondition(), quad=h22_quad(2), y_symmetric=True)
    assert val == pytest.approx(1.0, rel=1e-6)


def test_h22_second_moment_oracle():
    # closed form 1/(h+k) at h = k = 1
    val = h22_expectation(times_x(0, 0, laplace_z(1.0, [0])), single_vertex(1.0), BoundaryCondition(),
                          y_symmetric=True)
    assert val == pytest.approx(0.5, rel=1e-7)


def test_h22_boost_covariance():
    s, k, g = 0.6, 0.8, single_vertex(1.0)
    inner = laplace_z(k, [0])
    lhs = h22_expectation(lambda f: inner(boost(f, s)), g, BoundaryCondition(), quad=h22_quad(1, s))
    rhs = h22_expectation(inner, g, BoundaryCondition(s=s), quad=h22_quad(1, s))
    assert lhs == pytest.approx(rhs, rel=1e-5)


def test_h22_refuses_unpinned():
    with pytest.raises(SusyError):
        h22_expectation(one, pair(1.0), BoundaryCondition(pinned=None))


def test_free_normalization_and_localization():
    a = augmented_laplacian(single_vertex(1.0))
    assert free_expectation(one, a, pinned=1, y_symmetric=True) == pytest.approx(1.0, rel=1e-9)
    for k in [0.3, 1.0, 2.0]:
        val = free_expectation(laplace_z2(k, [0]), a, pinned=1, y_symmetric=True)
        assert val == pytest.approx(1.0, rel=1e-6)


def test_free_gaussian_oracle():
    val = free_expectation(laplace_square(1.0), np.array([[2.0]]), y_symmetric=True)
    assert val == pytest.approx(0.5, rel=1e-9)


def test_free_pair_with_boost():
    # ⟦x_0⟧ with δ pinned at sinh s: the Gaussian mean is sinh(s) times the harmonic extension
    g = pair(1.0, 1.0)
    a = augmented_laplacian(g)
    s = 0.7
    block = a[:2, :2]
    mean = -np.linalg.solve(block, a[:2, 2]) * math.sinh(s)
    val = free_expectation(times_x(0, None), a, pinned=2, s=s, y_symmetric=True)
    assert val == pytest.approx(mean[0], rel=1e-6)


def test_free_rejects_bad_forms():
    with pytest.raises(SusyError):
        free_expectation(one, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(SusyError):
        free_expectation(one, np.array([[1.0, -2.0], [-2.0, 1.0]]))


def test_fermion_two_point():
    # ⟦ξη⟧ = -1/a for a one-vertex form a
    a = np.array([[2.0]])
    val = free_expectation(lambda f: f.xi[0] * f.eta[0], a, y_symmetric=True)
    assert val == pytest.approx(-0.5, rel=1e-9)
