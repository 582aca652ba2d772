import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrjpiso.environment import (Environment, MCMCConfig, MixingMeasureError, change_root_transform, nu_density,
                                 nu_log_density, nu_quadrature, nu_sample, reroot_batch, write_samples_csv)
from vrjpiso.graph import pair, path3, single_vertex
from vrjpiso.grassmann import GrassmannElement as G, berezin_integrate


def test_single_edge_density_closed_form():
    h = 1.7
    g = single_vertex(h)
    for ua in [-1.3, 0.0, 0.4, 2.0]:
        expect = (math.exp(-0.5 * h * (math.exp(ua) + math.exp(-ua) - 2)) * math.sqrt(h * math.exp(ua))
                  * math.exp(-ua) / math.sqrt(2 * math.pi))
        assert nu_density(np.array([ua, 0.0]), g, root=1) == pytest.approx(expect, rel=1e-13)


def test_zero_environment_has_no_exponent():
    g = pair(2.0)
    logd = nu_log_density(np.zeros(2), g)
    assert logd == pytest.approx(0.5 * math.log(2.0) - 0.5 * math.log(2 * math.pi), rel=1e-14)


@pytest.mark.parametrize("g,root", [(single_vertex(1.0), 1), (pair(2.0), 0), (pair(1.0, 1.0), 2), (path3(), 0),
                                    (path3(), 1)])
def test_normalization(g, root):
    assert nu_quadrature(g, root=root) == pytest.approx(1.0, rel=1e-6)


def test_normalization_with_initial_local_times():
    g = pair(1.0, 1.0)
    assert nu_quadrature(g, z=[0.7, 1.4, 1.0], root=2) == pytest.approx(1.0, rel=1e-6)


def test_change_root_examples():
    v = change_root_transform(np.array([0.0, 0.7]), 0, 1)
    np.testing.assert_allclose(v.u, [-0.7, 0.0])
    assert v.root == 1
    back = v.rerooted(0)
    np.testing.assert_allclose(back.u, [0.0, 0.7])
    with pytest.raises(MixingMeasureError):
        change_root_transform(np.zeros(2), 0, 5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=5), st.data())
def test_change_root_involution(vals, data):
    u = np.array(vals)
    a = data.draw(st.integers(0, len(u) - 1))
    b = data.draw(st.integers(0, len(u) - 1))
    u = u - u[a]
    back = change_root_transform(change_root_transform(u, a, b), b, a)
    np.testing.assert_allclose(back.u, u, atol=1e-12)
    np.testing.assert_allclose(reroot_batch(u[None], b)[0], change_root_transform(u, a, b).u, atol=0)


def test_weighted_change_of_root():
    g = pair(1.0, 1.0)
    F = lambda u: np.exp(-(u[..., 0] - u[..., 1]) ** 2)
    lhs = nu_quadrature(g, lambda u: F(u) * np.exp(u[..., 1] - u[..., 0]), root=0)
    rhs = nu_quadrature(g, F, root=1)
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_environment_validation():
    with pytest.raises(MixingMeasureError):
        Environment(np.array([0.1, 0.0]), root=0)
    with pytest.raises(MixingMeasureError):
        Environment(np.array([0.0, np.inf]))
    e = Environment(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        e.u[1] = 2.0
    with pytest.raises(MixingMeasureError):
        nu_log_density(np.zeros(2), pair(), z=[1.0, -1.0])


def test_super_valued_initial_times():
    # with z = 1 + ξη the body is the plain density and Berezin extracts the soul part
    g = pair(1.0)
    u = np.array([0.0, 0.3])
    z = [G.scalar(1, 1.0), G.scalar(1, 1.0) + G.monomial(1, [0, 1])]
    d = nu_density(u, g, z)
    assert d.body == pytest.approx(nu_density(u, g), rel=1e-13)
    eps = 1e-6
    fd = (nu_density(u, g, [1.0, 1.0 + eps]) - nu_density(u, g, [1.0, 1.0 - eps])) / (2 * eps)
    assert -berezin_integrate(d) == pytest.approx(fd, rel=1e-6)


def test_sampler_trivial_and_moments():
    assert nu_sample(single_vertex(), 5).shape == (5, 1)
    g = single_vertex(1.0)
    u = nu_sample(g, 40_000, root=1, cfg=MCMCConfig(seed=3))
    assert np.all(u[:, 1] == 0)
    # ∫ e^{u_a - u_δ} ν_δ = ∫ ν_a = 1; the batch-means error accounts for chain correlation
    e = np.exp(u[:, 0])
    blocks = e[: len(e) // 100 * 100].reshape(100, -1).mean(axis=1)
    se = blocks.std(ddof=1) / math.sqrt(len(blocks))
    assert abs(e.mean() - 1.0) < 3 * se
    mean_q = nu_quadrature(g, lambda v: v[..., 0], root=1)
    ub = u[:, 0].reshape(100, -1).mean(axis=1)
    assert abs(u[:, 0].mean() - mean_q) < 3 * ub.std(ddof=1) / 10


def test_sampler_is_seeded():
    a = nu_sample(pair(1.0, 1.0), 500, root=2, cfg=MCMCConfig(seed=4, burn_in=200))
    b = nu_sample(pair(1.0, 1.0), 500, root=2, cfg=MCMCConfig(seed=4, burn_in=200))
    np.testing.assert_array_equal(a, b)


def test_samples_csv(tmp_path):
    p = write_samples_csv(tmp_path / "u.csv", np.array([[0.0, 1.5], [0.0, -0.25]]))
    lines = p.read_text().splitlines()
    assert lines == ["u0,u1", "0.0,1.5", "0.0,-0.25"]
