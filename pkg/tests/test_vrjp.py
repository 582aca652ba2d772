import math

import numpy as np
import pytest
from scipy import stats

from vrjpiso.graph import GraphError, WeightedGraph, full_weights, pair, single_vertex
from vrjpiso.vrjp import (ABSORBED, SimulationError, StopRule, Trajectory, poisson_tail_bound, quenched_generators,
                          simulate_quenched_batch, simulate_vrjp, simulate_vrjp_batch, simulate_Z_direct_batch,
                          skeleton_probability, skeletons, time_change, time_change_batch, trajectory_density,
                          trajectory_mass, two_cemetery_extension, w_tilde_k_plus_h, write_trajectory_csv)


def test_exit_time_is_exponential(rng):
    g = single_vertex(1.0)
    res = simulate_vrjp_batch(g, 0, 100_000, StopRule(absorbing=(g.delta,)), rng)
    assert np.all(res.reason == ABSORBED)
    se = res.elapsed.std() / math.sqrt(len(res))
    assert abs(res.elapsed.mean() - 1.0) < 3 * se


def test_star_first_jump(rng):
    g = WeightedGraph.from_edges(3, [(0, 1, 1.0), (0, 2, 3.0)])
    res = simulate_vrjp_batch(g, 0, 40_000, StopRule(jumps=1), rng, record=1)
    p = np.mean(res.skeleton[:, 1] == 2)
    assert abs(p - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 40_000)


def test_local_time_conservation(rng):
    g = WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)])
    z = np.array([0.5, 1.0, 2.0])
    res = simulate_vrjp_batch(g, 1, 500, StopRule(horizon=3.0), rng, z0=z)
    np.testing.assert_allclose((res.local - z).sum(axis=1), 3.0, rtol=1e-12)
    assert np.all(res.local >= z)
    tr = simulate_vrjp(g, 0, StopRule(horizon=2.0), rng, z0=z)
    assert np.all(np.diff(tr.jump_times) > 0)
    assert all(g.weights[a, b] > 0 for a, b in zip(tr.skeleton[:-1], tr.skeleton[1:]))
    np.testing.assert_allclose(tr.local_times().sum() - z.sum(), 2.0, rtol=1e-12)


def test_horizon_required():
    with pytest.raises(SimulationError):
        StopRule()
    with pytest.raises(SimulationError):
        simulate_vrjp_batch(single_vertex(1.0), 1, 3, StopRule(absorbing=(1,)), np.random.default_rng(0))


def test_time_change_single_sojourn():
    t = 0.8
    tr = time_change(Trajectory([0], [], t, np.ones(2)))
    assert tr.end_time == pytest.approx((1 + t) ** 2 - 1)
    assert tr.local_times()[0] == pytest.approx((1 + t) ** 2 - 1)


def test_time_change_identity(rng):
    g = pair(1.5)
    z = np.array([1.0, 0.6])
    tr = simulate_vrjp(g, 0, StopRule(horizon=2.5), rng, z0=z)
    zt = time_change(tr)
    np.testing.assert_allclose(np.sqrt(zt.local_times() + z * z), tr.local_times(), rtol=1e-12)
    np.testing.assert_array_equal(zt.skeleton, tr.skeleton)
    with pytest.raises(SimulationError):
        time_change(zt)


def test_direct_z_survival(rng):
    h = 1.4
    g = single_vertex(h)
    res = simulate_Z_direct_batch(g, 0, 20_000, StopRule(absorbing=(g.delta,)), rng)
    p = stats.kstest(res.elapsed, lambda s: 1 - np.exp(-h * (np.sqrt(1 + s) - 1))).pvalue
    assert p > 0.01


def test_direct_z_matches_time_change(rng):
    g = pair(1.0, 0.5)
    stop = StopRule(absorbing=(g.delta,), jumps=1)
    zd = simulate_Z_direct_batch(g, 0, 10_000, stop, rng, record=1)
    y = simulate_vrjp_batch(g, 0, 10_000, stop, rng, record=1)
    s = time_change_batch(y)[:, 0]
    assert stats.ks_2samp(zd.jump_times[:, 0], s).pvalue > 0.01


def test_skeleton_invariant_under_time_change(rng):
    g = WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)])
    stop = StopRule(jumps=3)
    a = simulate_vrjp_batch(g, 0, 20_000, stop, rng, record=3).skeleton
    b = simulate_Z_direct_batch(g, 0, 20_000, stop, rng, record=3).skeleton
    keys = sorted(set(map(tuple, a)) | set(map(tuple, b)))
    ca = [np.sum(np.all(a == k, axis=1)) for k in keys]
    cb = [np.sum(np.all(b == k, axis=1)) for k in keys]
    assert stats.chi2_contingency([ca, cb]).pvalue > 0.01


def test_quenched_generators(rng):
    g = pair(1.0, 0.5)
    zero = quenched_generators(g, np.zeros(3))
    off = ~np.eye(3, dtype=bool)
    w = full_weights(g)
    np.testing.assert_allclose(zero.markov[off], 0.5 * w[off])
    u = rng.normal(size=3)
    q = quenched_generators(g, u)
    np.testing.assert_allclose(q.B, q.B.T)
    eu = np.exp(-u)
    np.testing.assert_allclose(q.A, eu[:, None] * q.B * eu[None, :], rtol=1e-12)
    np.testing.assert_allclose(q.markov.sum(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(q.A[off], -w[off])


def test_quenched_clocks_scale(rng):
    g = pair(1.0, 0.5)
    u = np.array([0.3, -0.4, 0.0])
    stop = StopRule(absorbing=(g.delta,))
    a = simulate_quenched_batch(g, u, 0, 40_000, stop, rng, clock="A").local
    b = simulate_quenched_batch(g, u, 0, 40_000, stop, rng, clock="B").local
    for i in range(2):
        scaled = 2 * math.exp(2 * u[i]) * b[:, i]
        se = math.hypot(a[:, i].std(), scaled.std()) / math.sqrt(40_000)
        assert abs(a[:, i].mean() - scaled.mean()) < 3 * se


def test_density_no_jump():
    t = 0.7
    assert trajectory_density([0], pair(1.0), np.zeros(0), t) == pytest.approx(math.exp(-t))
    # inadmissible step gives zero density
    g = WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    assert trajectory_density([0, 2], g, [0.1], 1.0) == 0.0


def test_density_total_mass():
    mass, tail = trajectory_mass(pair(1.0), 0, 0.3, n_max=4)
    assert tail < 1e-3
    assert 1 - tail - 1e-10 <= mass <= 1 + 1e-10


def test_skeleton_frequencies(rng):
    g, t, n = pair(1.0), 0.5, 100_000
    res = simulate_vrjp_batch(g, 0, n, StopRule(horizon=t), rng, record=3)
    for m in range(3):
        for sk in skeletons(g, 0, m):
            p = skeleton_probability(g, sk, t)
            hits = np.mean((res.n_jumps == m) & np.all(res.skeleton[:, : m + 1] == sk, axis=1))
            assert abs(hits - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_poisson_tail_monotone():
    g = pair(1.0)
    assert poisson_tail_bound(g, 0.3, 6) < poisson_tail_bound(g, 0.3, 3) < 1


def test_two_cemeteries(rng):
    base = single_vertex()
    tc = two_cemetery_extension(base, 1.0, 1.0)
    res = simulate_vrjp_batch(tc.graph, 0, 40_000, StopRule(absorbing=(tc.iota, tc.delta)), rng)
    p = np.mean(res.position == tc.delta)
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / 40_000)
    tc0 = two_cemetery_extension(pair(1.0), 0.0, 1.0)
    res0 = simulate_vrjp_batch(tc0.graph, 0, 100_000, StopRule(absorbing=(tc0.iota, tc0.delta)), rng)
    assert not np.any(res0.position == tc0.iota)
    with pytest.raises(GraphError):
        two_cemetery_extension(base, -1.0, 1.0)


def test_w_tilde_restriction():
    g = pair(2.0)
    ag = w_tilde_k_plus_h(g, [0.5, 1.0], 0.25)
    np.testing.assert_array_equal(full_weights(ag)[:2, :2], g.weights)
    np.testing.assert_allclose(ag.cemetery, [0.75, 1.25])


def test_trajectory_csv(tmp_path):
    tr = Trajectory([0, 1], [0.5], 1.0, np.ones(2))
    p = write_trajectory_csv(tmp_path / "t.csv", tr)
    assert p.read_text().splitlines() == ["time,vertex", "0.0,0", "0.5,1"]
    with pytest.raises(SimulationError):
        Trajectory([0, 1], [-0.5], 1.0, np.ones(2))
