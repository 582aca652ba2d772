"""Exact samplers for the VRJP, its time change, and the quenched processes.

All samplers share one batched event loop. While a walker sits at vertex i
every quantity that drives its jumps is frozen except its own local time, so
holding times can be drawn in closed form:

* VRJP ``Y``: total rate ``Σ_j W_ij L_j`` is constant, holding ~ Exp(R).
* time-changed ``Z`` (direct): hazard ``c / sqrt(S_i + z_i²)`` integrates
  to ``2c(sqrt(A + σ) - sqrt(A))``, inverted exactly.
* quenched Markov process: static rates ``½ W_ij e^{u_j - u_i}``
  (or the reversible clock ``W_ij e^{u_i + u_j}``).

Graphs may be augmented; δ (index n) is then reachable and usually absorbing.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .graph import AugmentedGraph, GraphError, WeightedGraph, full_weights

HORIZON, ABSORBED, THRESHOLD, MAX_JUMPS, JUMPS = 0, 1, 2, 3, 4


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class StopRule:
    """When to stop a walker.

    ``horizon`` is a time limit in the process's own clock (scalar or one
    value per walker); ``absorbing`` lists vertices where the walk is killed
    on arrival; ``threshold=(v, level)`` stops when the local time at ``v``
    reaches ``level``; ``jumps`` stops right after that many jumps.
    """

    horizon: float | np.ndarray | None = None
    absorbing: tuple = ()
    threshold: tuple | None = None
    jumps: int | None = None
    max_jumps: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "absorbing", tuple(int(a) for a in self.absorbing))
        if self.horizon is None and not self.absorbing and self.threshold is None and self.jumps is None:
            raise SimulationError("stop rule never fires: give a horizon, absorbing set or threshold")


def killed_at_delta(g: AugmentedGraph, **kw) -> StopRule:
    return StopRule(absorbing=(g.delta,), **kw)


@dataclass
class Trajectory:
    """A path: skeleton i_0..i_k, jump times, end time and initial local times.

    ``clock`` is ``"Y"`` (VRJP time, local times L = z + occupation),
    ``"Z"`` (time-changed, local times S = occupation) or ``"quenched"``.
    """

    skeleton: np.ndarray
    jump_times: np.ndarray
    end_time: float
    z: np.ndarray
    clock: str = "Y"
    absorbed: bool = False

    def __post_init__(self):
        self.skeleton = np.asarray(self.skeleton, dtype=int)
        self.jump_times = np.asarray(self.jump_times, dtype=float)
        if len(self.skeleton) != len(self.jump_times) + 1:
            raise SimulationError("skeleton must have one more entry than jump times")
        if np.any(np.diff(self.jump_times) <= 0) or (len(self.jump_times) and self.jump_times[0] <= 0):
            raise SimulationError("jump times must be strictly increasing and positive")

    @property
    def holding_times(self) -> np.ndarray:
        """Time spent at each skeleton entry; the last one is zero if absorbed."""
        t = np.concatenate([[0.0], self.jump_times, [self.end_time]])
        hold = np.diff(t)
        if self.absorbed:
            hold[-1] = 0.0
        return hold

    def occupation(self, n: int | None = None) -> np.ndarray:
        n = n or len(self.z)
        occ = np.zeros(n)
        np.add.at(occ, self.skeleton, self.holding_times)
        return occ

    def local_times(self) -> np.ndarray:
        """Final local times: L = z + occupation (Y clock) or S = occupation."""
        occ = self.occupation()
        return self.z + occ if self.clock == "Y" else occ

    def to_rows(self):
        times = np.concatenate([[0.0], self.jump_times])
        return list(zip(times.tolist(), self.skeleton.tolist()))


@dataclass
class BatchResult:
    """Outcome of a batch of walkers (final local times and bookkeeping)."""

    local: np.ndarray
    elapsed: np.ndarray
    position: np.ndarray
    previous: np.ndarray
    reason: np.ndarray
    n_jumps: np.ndarray
    skeleton: np.ndarray
    jump_times: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.elapsed)


# event loop --------------------------------------------------------------------

def _as_z(z, n: int) -> np.ndarray:
    z = np.ones(n) if z is None else np.broadcast_to(np.asarray(z, dtype=float), (n,)).copy()
    if np.any(z <= 0):
        raise SimulationError("initial local times must be positive")
    return z


def _safe_div(num, den):
    # isolated vertices have total rate 0 and never leave
    return np.divide(num, den, out=np.full_like(num, np.inf), where=den > 0)


def _run(w: np.ndarray, start, count: int, stop: StopRule, rng: np.random.Generator,
         kind: str, z: np.ndarray, u: np.ndarray | None = None, record: int = 0,
         local0: np.ndarray | None = None) -> BatchResult:
    n = w.shape[0]
    if kind == "Y":
        local = np.tile(z, (count, 1))
    else:
        local = np.zeros((count, n))
    if local0 is not None:
        local = np.array(np.broadcast_to(local0, (count, n)), dtype=float)
    pos = np.broadcast_to(np.asarray(start, dtype=int), (count,)).copy()
    if np.any((pos < 0) | (pos >= n)):
        raise SimulationError("start vertex outside the graph")
    elapsed = np.zeros(count)
    prev = np.full(count, -1)
    reason = np.full(count, MAX_JUMPS)
    n_jumps = np.zeros(count, dtype=int)
    skel = np.full((count, record + 1), -1)
    skel[:, 0] = pos
    jtimes = np.full((count, record), np.nan)
    horizon = None if stop.horizon is None else np.broadcast_to(np.asarray(stop.horizon, float), (count,))
    absorbing = np.zeros(n, dtype=bool)
    absorbing[list(stop.absorbing)] = True
    if np.any(absorbing[pos]):
        raise SimulationError("walk starts in an absorbing vertex")
    thr_v, thr_level = (stop.threshold if stop.threshold is not None else (-1, np.inf))
    alive = np.ones(count, dtype=bool)
    if thr_v >= 0:
        done = local[:, thr_v] >= thr_level
        reason[done] = THRESHOLD
        alive &= ~done
    if kind in ("A", "B") and u is not None:
        u = np.broadcast_to(np.asarray(u, dtype=float), (count, n))
    step = 0
    if stop.jumps == 0:
        reason[alive] = JUMPS
        alive[:] = False
    while alive.any() and step < stop.max_jumps:
        idx = np.flatnonzero(alive)
        i = pos[idx]
        loc = local[idx]
        wi = w[i]
        E = rng.exponential(size=len(idx))
        if kind == "Y":
            weights = wi * loc
            tau = _safe_div(E, weights.sum(axis=1))
        elif kind == "Z":
            root_s = np.sqrt(loc + z * z)
            weights = wi * root_s
            c = 0.5 * weights.sum(axis=1)
            a = loc[np.arange(len(idx)), i] + z[i] ** 2
            tau = (np.sqrt(a) + _safe_div(E, 2 * c)) ** 2 - a
        else:
            uu = u[idx]
            ui = uu[np.arange(len(idx)), i]
            if kind == "A":
                weights = 0.5 * wi * np.exp(uu - ui[:, None])
            else:
                weights = wi * np.exp(uu + ui[:, None])
            tau = _safe_div(E, weights.sum(axis=1))
        dt = tau.copy()
        why = np.full(len(idx), -1)
        if thr_v >= 0:
            at = i == thr_v
            room = thr_level - loc[:, thr_v]
            hit = at & (room <= tau)
            dt[hit] = room[hit]
            why[hit] = THRESHOLD
        if horizon is not None:
            left = horizon[idx] - elapsed[idx]
            hit = (left <= dt)
            dt[hit] = left[hit]
            why[hit] = HORIZON
        rows = np.arange(len(idx))
        loc[rows, i] += dt
        local[idx] = loc
        elapsed[idx] += dt
        stopped = why >= 0
        reason[idx[stopped]] = why[stopped]
        alive[idx[stopped]] = False
        jumpers = ~stopped
        if jumpers.any():
            jw = weights[jumpers]
            cum = np.cumsum(jw, axis=1)
            r = rng.random(jumpers.sum()) * cum[:, -1]
            j = np.minimum((cum < r[:, None]).sum(axis=1), n - 1)
            jid = idx[jumpers]
            k = n_jumps[jid]
            rec = k < record
            skel[jid[rec], k[rec] + 1] = j[rec]
            jtimes[jid[rec], k[rec]] = elapsed[jid[rec]]
            n_jumps[jid] += 1
            prev[jid] = i[jumpers]
            pos[jid] = j
            dead = absorbing[j]
            reason[jid[dead]] = ABSORBED
            alive[jid[dead]] = False
            if stop.jumps is not None:
                enough = ~dead & (n_jumps[jid] >= stop.jumps)
                reason[jid[enough]] = JUMPS
                alive[jid[enough]] = False
        step += 1
    if alive.any():
        raise SimulationError(f"{alive.sum()} walkers did not stop within {stop.max_jumps} jumps")
    prev[reason != ABSORBED] = -1
    return BatchResult(local, elapsed, pos, prev, reason, n_jumps, skel, jtimes, z)


def _weights(g) -> np.ndarray:
    return full_weights(g)


def simulate_vrjp_batch(g: WeightedGraph | AugmentedGraph, start: int, count: int, stop: StopRule,
                        rng: np.random.Generator, z0=None, record: int = 0) -> BatchResult:
    """Run ``count`` independent VRJP walkers (Y clock)."""
    w = _weights(g)
    return _run(w, start, count, stop, rng, "Y", _as_z(z0, w.shape[0]), record=record)


def _single(res: BatchResult, clock: str) -> Trajectory:
    k = int(res.n_jumps[0])
    return Trajectory(res.skeleton[0, :k + 1], res.jump_times[0, :k], float(res.elapsed[0]), res.z,
                      clock=clock, absorbed=bool(res.reason[0] == ABSORBED))


def simulate_vrjp(g: WeightedGraph | AugmentedGraph, start: int, stop: StopRule,
                  rng: np.random.Generator, z0=None) -> Trajectory:
    """One exact VRJP path with jump rates ``W_ij L_j(t)``."""
    res = simulate_vrjp_batch(g, start, 1, stop, rng, z0, record=stop.max_jumps)
    return _single(res, "Y")


def simulate_Z_direct_batch(g: WeightedGraph | AugmentedGraph, start: int, count: int, stop: StopRule,
                            rng: np.random.Generator, z0=None, record: int = 0) -> BatchResult:
    """Time-changed process sampled directly from its rates ``½W_ij √((S_j+z_j²)/(S_i+z_i²))``."""
    w = _weights(g)
    return _run(w, start, count, stop, rng, "Z", _as_z(z0, w.shape[0]), record=record)


def simulate_Z_direct(g, start: int, stop: StopRule, rng: np.random.Generator, z0=None) -> Trajectory:
    res = simulate_Z_direct_batch(g, start, 1, stop, rng, z0, record=stop.max_jumps)
    return _single(res, "Z")


def time_change(traj: Trajectory) -> Trajectory:
    """Map a Y-clock path to Z time: ``D(t) = Σ_i (L_i(t)² - z_i²)``."""
    if traj.clock != "Y":
        raise SimulationError("time change applies to VRJP (Y clock) paths")
    z = traj.z
    L = z.copy()
    t_prev = 0.0
    s_times = []
    for k, t in enumerate(traj.jump_times):
        L[traj.skeleton[k]] += t - t_prev
        t_prev = t
        s_times.append(float(np.sum(L * L - z * z)))
    if not traj.absorbed:
        L[traj.skeleton[-1]] += traj.end_time - t_prev
    end = float(np.sum(L * L - z * z))
    return Trajectory(traj.skeleton, np.array(s_times), end, z, clock="Z", absorbed=traj.absorbed)


def time_change_batch(res: BatchResult) -> np.ndarray:
    """Z-clock times of the recorded jumps of a Y batch (NaN where not recorded)."""
    z = res.z
    count, record = res.jump_times.shape
    L = np.tile(z, (count, 1))
    out = np.full((count, record), np.nan)
    t_prev = np.zeros(count)
    rows = np.arange(count)
    for k in range(record):
        t = res.jump_times[:, k]
        ok = ~np.isnan(t)
        v = res.skeleton[:, k]
        L[rows[ok], v[ok]] += t[ok] - t_prev[ok]
        t_prev[ok] = t[ok]
        out[ok, k] = np.sum(L[ok] ** 2 - z ** 2, axis=1)
    return out


def z_local_times(L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``S_i = L_i² - z_i²``."""
    return L * L - z * z


# quenched processes ---------------------------------------------------------------

@dataclass(frozen=True)
class QuenchedGenerator:
    """``A^u`` (off-diagonal ``-W``) and its symmetric conjugate ``B^u = e^u A^u e^u``."""

    A: np.ndarray
    B: np.ndarray
    u: np.ndarray

    @property
    def markov(self) -> np.ndarray:
        """Generator of the quenched process, ``½ e^{-u} A^u e^u`` (rows sum to zero)."""
        eu = np.exp(self.u)
        return -0.5 * (self.A * eu[None, :] / eu[:, None])


def quenched_generators(g: WeightedGraph | AugmentedGraph, u) -> QuenchedGenerator:
    """``A^u`` and ``B^u`` over the full vertex set of ``g`` (Ã^u, B̃^u when augmented)."""
    w = _weights(g)
    u = np.asarray(u, dtype=float)
    if u.shape != (w.shape[0],):
        raise SimulationError("environment has the wrong size")
    eu = np.exp(u)
    A = -w.copy()
    np.fill_diagonal(A, (w * eu[None, :]).sum(axis=1) / eu)
    B = -w * eu[:, None] * eu[None, :]
    np.fill_diagonal(B, (w * eu[None, :]).sum(axis=1) * eu)
    return QuenchedGenerator(A, B, u)


def simulate_quenched_batch(g: WeightedGraph | AugmentedGraph, u, start: int, count: int, stop: StopRule,
                            rng: np.random.Generator, clock: str = "A", record: int = 0) -> BatchResult:
    """Markov walkers with rates ``½W_ij e^{u_j-u_i}`` (clock "A") or ``W_ij e^{u_i+u_j}`` ("B").

    ``u`` may be a single environment or one per walker (annealed use).
    """
    if clock not in ("A", "B"):
        raise SimulationError("clock must be 'A' or 'B'")
    w = _weights(g)
    return _run(w, start, count, stop, rng, clock, np.ones(w.shape[0]), u=u, record=record)


def simulate_quenched(g, u, start: int, stop: StopRule, rng: np.random.Generator, clock: str = "A") -> Trajectory:
    res = simulate_quenched_batch(g, u, start, 1, stop, rng, clock, record=stop.max_jumps)
    return _single(res, "quenched")


# trajectory density ------------------------------------------------------------------

def trajectory_density(traj_or_skeleton, g: WeightedGraph | AugmentedGraph, jump_times=None,
                       t: float | None = None, z=None, k=None) -> np.ndarray:
    """Density ``d_σ`` of a VRJP path with the given skeleton and jump times.

    ``jump_times`` may carry batch axes ``(..., n_jumps)``. With killing
    rates ``k`` (an extra cemetery ι with ``W_iι = k_i`` and ``L_ι ≡ 1``)
    the extended density ``d̃_σ = e^{-⟨k, ℓ⟩} d_σ`` is returned.
    """
    if isinstance(traj_or_skeleton, Trajectory):
        tr = traj_or_skeleton
        skeleton, jump_times, t, z = tr.skeleton, tr.jump_times, tr.end_time, tr.z
    else:
        skeleton = np.asarray(traj_or_skeleton, dtype=int)
    w = _weights(g)
    n = w.shape[0]
    z = _as_z(z, n)
    kk = np.zeros(n) if k is None else np.broadcast_to(np.asarray(k, dtype=float), (n,))
    jt = np.asarray(jump_times, dtype=float)
    if jt.shape[-1] != len(skeleton) - 1:
        raise SimulationError("need one jump time per skeleton step")
    batch = jt.shape[:-1]
    times = np.concatenate([np.zeros(batch + (1,)), jt, np.full(batch + (1,), float(t))], axis=-1)
    hold = np.diff(times, axis=-1)
    valid = np.all(hold > 0, axis=-1) if len(skeleton) > 1 else np.ones(batch, dtype=bool)
    L = np.broadcast_to(z, batch + (n,)).copy()
    logd = np.zeros(batch)
    for m, v in enumerate(skeleton):
        if m > 0:
            wij = w[skeleton[m - 1], v]
            if wij <= 0:
                return np.zeros(batch)
            logd = logd + np.log(wij * L[..., v])
        rate = (w[v] * L).sum(axis=-1) + kk[v]
        logd = logd - rate * hold[..., m]
        L[..., v] = L[..., v] + hold[..., m]
    return np.where(valid, np.exp(logd), 0.0)


def _simplex_rule(dim: int, t: float, nodes: int):
    """Gauss-Legendre points on ``0 < t_1 < ... < t_dim < t`` (nested mapping)."""
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, wx = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1)
    wx = 0.5 * wx
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wg = np.meshgrid(*([wx] * dim), indexing="ij")
    v = np.stack([g_.ravel() for g_ in grids], axis=1)
    wv = np.prod(np.stack([g_.ravel() for g_ in wg], axis=1), axis=1)
    pts = np.empty_like(v)
    lo = np.zeros(len(wv))
    jac = np.ones(len(wv))
    for d in range(dim):
        span = t - lo
        pts[:, d] = lo + span * v[:, d]
        jac *= span
        lo = pts[:, d]
    return pts, wv * jac


def skeletons(g, start: int, n_jumps: int, end: int | None = None):
    """All admissible skeletons with exactly ``n_jumps`` steps."""
    w = _weights(g)
    out = []

    def grow(path):
        if len(path) == n_jumps + 1:
            if end is None or path[-1] == end:
                out.append(tuple(path))
            return
        for j in np.flatnonzero(w[path[-1]] > 0):
            grow(path + [int(j)])

    grow([start])
    return out


def skeleton_probability(g, skeleton: Sequence[int], t: float, z=None, k=None, nodes: int = 16) -> float:
    """``∫ d_σ dt_1..dt_n`` over ordered jump times in (0, t)."""
    pts, wts = _simplex_rule(len(skeleton) - 1, t, nodes)
    return float(np.dot(wts, trajectory_density(skeleton, g, pts, t, z, k)))


def poisson_tail_bound(g, t: float, n_max: int, z=None) -> float:
    """Bound on P(more than ``n_max`` jumps by time t).

    All jump rates are at most ``R = max_i Σ_j W_ij (z_j + t)`` before t, so
    the jump count is dominated by a Poisson(R t) variable.
    """
    w = _weights(g)
    z = _as_z(z, w.shape[0])
    rate = float(np.max(w @ (z + t)))
    return float(stats.poisson.sf(n_max, rate * t))


def trajectory_mass(g, start: int, t: float, n_max: int = 4, z=None, k=None, nodes: int = 16):
    """Total mass of ``d_σ`` over paths with at most ``n_max`` jumps.

    Returns ``(mass, tail_bound)``; for ``k = 0`` the mass lies in
    ``[1 - tail_bound, 1]``.
    """
    total = 0.0
    for m in range(n_max + 1):
        for sk in skeletons(g, start, m):
            total += skeleton_probability(g, sk, t, z, k, nodes)
    return total, poisson_tail_bound(g, t, n_max, z)


# cemetery constructions --------------------------------------------------------------

@dataclass(frozen=True)
class TwoCemeteryGraph:
    """``V ∪ {ι, δ}`` with ``W_iι = k_i`` and ``W_iδ = h`` for ``i ∈ V ∪ {ι}``."""

    graph: WeightedGraph
    iota: int
    delta: int


def two_cemetery_extension(g: WeightedGraph, k, h: float) -> TwoCemeteryGraph:
    n = g.n
    k = np.broadcast_to(np.asarray(k, dtype=float), (n,))
    if np.any(k < 0) or h <= 0:
        raise GraphError("need k >= 0 and h > 0")
    w = np.zeros((n + 2, n + 2))
    w[:n, :n] = g.weights
    w[:n, n] = w[n, :n] = k
    w[: n + 1, n + 1] = w[n + 1, : n + 1] = h
    return TwoCemeteryGraph(WeightedGraph(w, name=f"{g.name}+iota+delta"), n, n + 1)


def w_tilde_k_plus_h(g: WeightedGraph, k, h: float) -> AugmentedGraph:
    """Cemetery weights ``k_i + h``; the V×V block is unchanged."""
    k = np.broadcast_to(np.asarray(k, dtype=float), (g.n,))
    return AugmentedGraph(g, k + h, name=f"{g.name}^(k+h)")


# smooth Laplace functional estimator ----------------------------------------------------

@dataclass
class LaplaceEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    residual_weight: float


def laplace_functional_crn(g: AugmentedGraph, start: int, k, z_points: np.ndarray, paths: int,
                           rng: np.random.Generator, max_steps: int = 400,
                           cutoff: float = 1e-15) -> LaplaceEstimate:
    """Estimate ``E_{a,z}[exp(-⟨k, L - z⟩)]`` for the VRJP killed at δ, at many z.

    ``z_points`` has shape ``(P, n + 1)`` (δ included). The same random
    numbers drive every z, and killing is integrated analytically at each
    sojourn (``E e^{-k_i τ} 1_{jump to δ} = r_δ / (R + k_i)``) while walkers
    are forced to move inside V with the compensating weight. When each
    vertex has a single neighbour in V, the estimate is a smooth function of
    z, which is what a polynomial fit needs.
    """
    w = full_weights(g)
    n1 = w.shape[0]
    d = g.delta
    z_points = np.atleast_2d(np.asarray(z_points, dtype=float))
    P = z_points.shape[0]
    kk = np.zeros(n1)
    kk[: g.n] = np.broadcast_to(np.asarray(k, dtype=float), (g.n,))
    E = rng.exponential(size=(max_steps, paths))
    U = rng.random(size=(max_steps, paths))
    L = np.broadcast_to(z_points[:, None, :], (P, paths, n1)).copy()
    pos = np.full((P, paths), start)
    weight = np.ones((P, paths))
    est = np.zeros((P, paths))
    inner = np.ones(n1, dtype=bool)
    inner[d] = False
    pp, mm = np.meshgrid(np.arange(P), np.arange(paths), indexing="ij")
    for step in range(max_steps):
        rates = w[pos] * L
        R = rates.sum(axis=-1)
        rd = rates[..., d]
        ki = kk[pos]
        est += weight * rd / (R + ki)
        tau = E[step][None, :] / R
        weight *= np.exp(-ki * tau) * (R - rd) / R
        L[pp, mm, pos] += tau
        inside = rates * inner
        cum = np.cumsum(inside, axis=-1)
        r = U[step][None, :] * cum[..., -1]
        pos = np.minimum((cum < r[..., None]).sum(axis=-1), n1 - 1)
        if weight.max() < cutoff:
            break
    return LaplaceEstimate(est.mean(axis=1), est.std(axis=1, ddof=1) / math.sqrt(paths), float(weight.max()))


def write_trajectory_csv(path, traj: Trajectory) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "vertex"])
        for t, v in traj.to_rows():
            wr.writerow([repr(t), v])
    return path


def write_batch_csv(path, res: BatchResult, columns: Sequence[str] = ("elapsed",)) -> Path:
    """One row per walker: elapsed time, end vertex, stop reason and final local times."""
    path = Path(path)
    n = res.local.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["elapsed", "position", "previous", "reason"] + [f"local{i}" for i in range(n)])
        for r in range(len(res)):
            wr.writerow([repr(float(res.elapsed[r])), int(res.position[r]), int(res.previous[r]),
                         int(res.reason[r])] + [repr(float(v)) for v in res.local[r]])
    return path
