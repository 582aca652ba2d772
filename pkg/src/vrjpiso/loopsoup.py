"""Quenched Markov loop soups and their annealed (reinforced) version.

A soup is sampled through its jump chain ``Q = I - D^{-1} L`` (D the
diagonal of the generator L):

* trivial loops at i contribute Gamma(α, rate L_ii) occupation;
* the number of nontrivial loops is Poisson(-α log det(I - Q));
* a loop has k jumps with probability ∝ tr(Q^k)/k, base point ∝ (Q^k)_ii,
  its skeleton is a Markov bridge of Q, and every visit holds an
  independent Exponential(L_vv) time.

Only visit counts matter for the occupation field, so batched sampling draws
``Gamma(α + visits_v, rate L_vv)`` per vertex.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .environment import MCMCConfig, nu_sample
from .graph import AugmentedGraph, full_weights

TAIL_TOL = 1e-10


class LoopSoupError(ValueError):
    pass


@dataclass(frozen=True)
class LoopGenerator:
    """Generator ``L`` over V (killing folded into the diagonal) and its jump chain.

    ``L`` may carry a leading batch axis (one generator per environment).
    """

    L: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        d = np.diagonal(L, axis1=-2, axis2=-1)
        if np.any(d <= 0):
            raise LoopSoupError("generator diagonal must be positive")
        object.__setattr__(self, "L", L)
        rho = self.spectral_radius
        if np.any(rho >= 1 - 1e-14):
            raise LoopSoupError("jump chain is not killed (spectral radius >= 1)")

    @property
    def n(self) -> int:
        return self.L.shape[-1]

    @property
    def diag(self) -> np.ndarray:
        return np.diagonal(self.L, axis1=-2, axis2=-1).copy()

    @property
    def Q(self) -> np.ndarray:
        d = self.diag
        Q = -self.L / d[..., :, None]
        idx = np.arange(self.n)
        Q[..., idx, idx] = 0.0
        return Q

    @property
    def spectral_radius(self) -> np.ndarray:
        return np.max(np.abs(np.linalg.eigvals(self.Q)), axis=-1)

    @property
    def A(self) -> np.ndarray:
        """The symmetric matrix ``2 e^{u} L e^{-u}`` (``Ã^u`` restricted to V)."""
        if self.u is None:
            return 2 * self.L
        eu = np.exp(self.u)
        return 2 * self.L * eu[..., :, None] / eu[..., None, :]


def loop_generator(g: AugmentedGraph, u=None) -> LoopGenerator:
    """``L^u`` over V: off-diagonal ``-½W_ij e^{u_j-u_i}``, diagonal ``Σ_{k∈Ṽ} ½W_ik e^{u_k-u_i}``.

    ``u`` covers Ṽ (δ last) or only V (then ``u_δ = 0``); batch axes allowed.
    """
    if not isinstance(g, AugmentedGraph):
        raise LoopSoupError("loop soups need a killed (augmented) graph")
    w = full_weights(g)
    n = g.n
    u = np.zeros(n + 1) if u is None else np.asarray(u, dtype=float)
    if u.shape[-1] == n:
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
    if u.shape[-1] != n + 1:
        raise LoopSoupError("environment has the wrong size")
    ratio = np.exp(u[..., None, :] - u[..., :, None])
    full = 0.5 * w * ratio
    L = -full[..., :n, :n].copy()
    idx = np.arange(n)
    L[..., idx, idx] = full[..., :n, :].sum(axis=-1)
    return LoopGenerator(L, u[..., :n] - u[..., n:n + 1])


@dataclass
class BasedLoop:
    """A nontrivial loop: skeleton ``i_0 .. i_{k-1}`` (returns to i_0) and one hold per visit."""

    skeleton: np.ndarray
    holds: np.ndarray

    def __post_init__(self):
        self.skeleton = np.asarray(self.skeleton, dtype=int)
        self.holds = np.asarray(self.holds, dtype=float)
        if len(self.skeleton) < 1 or len(self.holds) != len(self.skeleton):
            raise LoopSoupError("a loop needs one holding time per visit")
        if np.any(self.holds <= 0):
            raise LoopSoupError("holding times must be positive")

    def occupation(self, n: int) -> np.ndarray:
        occ = np.zeros(n)
        np.add.at(occ, self.skeleton, self.holds)
        return occ


@dataclass
class LoopSoupSample:
    loops: list
    trivial: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return len(self.trivial)


def occupation_field(sample: LoopSoupSample) -> np.ndarray:
    """Trivial occupation plus the holding totals of every loop."""
    occ = np.array(sample.trivial, dtype=float)
    for loop in sample.loops:
        occ += loop.occupation(sample.n)
    return occ


def path_measure_density(skeleton: Sequence[int], jump_times, t: float, gen: LoopGenerator) -> float:
    """Density of the path measure at the given jump times.

    Jump factors are the rates ``-L_{v,w}``; each sojourn contributes
    ``exp(-L_vv · duration)``.
    """
    L = gen.L
    sk = np.asarray(skeleton, dtype=int)
    jt = np.asarray(jump_times, dtype=float)
    times = np.concatenate([[0.0], jt, [t]])
    hold = np.diff(times)
    if np.any(hold <= 0):
        return 0.0
    value = 1.0
    for m in range(1, len(sk)):
        rate = -L[sk[m - 1], sk[m]]
        if rate <= 0 or sk[m] == sk[m - 1]:
            return 0.0
        value *= rate
    return float(value * np.exp(-np.sum(np.diag(L)[sk] * hold)))


def truncation_length(rho: float, n: int, tol: float = TAIL_TOL, k_cap: int = 100_000) -> tuple[int, float]:
    """Smallest K with ``n Σ_{k>K} ρ^k / k <= tol`` (Q has real spectrum)."""
    if rho <= 0:
        return 1, 0.0
    K = 1
    while True:
        bound = n * rho ** (K + 1) / ((K + 1) * (1 - rho))
        if bound <= tol:
            return K, bound
        K += 1
        if K > k_cap:
            raise LoopSoupError(f"loop length truncation exceeded {k_cap} (spectral radius {rho})")


def _powers(Q: np.ndarray, K: int) -> np.ndarray:
    """``Q^0 .. Q^K`` stacked on axis -3."""
    out = np.empty(Q.shape[:-2] + (K + 1,) + Q.shape[-2:])
    out[..., 0, :, :] = np.eye(Q.shape[-1])
    for k in range(1, K + 1):
        out[..., k, :, :] = out[..., k - 1, :, :] @ Q
    return out


def _sample_skeletons(Q: np.ndarray, alpha: float, rng: np.random.Generator, tol: float):
    """Nontrivial loop skeletons for a batch of jump chains ``Q`` of shape (B, n, n).

    Returns ``(owner, lengths, visits, skeletons, tail)``: the soup index and
    length of every loop, visit counts (B, n), padded skeletons and the
    length-truncation bound.
    """
    B, n, _ = Q.shape
    rho = float(np.max(np.abs(np.linalg.eigvals(Q))))
    K, tail = truncation_length(rho, n, tol)
    P = _powers(Q, K)
    traces = np.trace(P, axis1=-2, axis2=-1)[:, 1:] / np.arange(1, K + 1)
    traces = np.maximum(traces, 0.0)
    sign, logdet = np.linalg.slogdet(np.eye(n) - Q)
    lam = -alpha * logdet
    counts = rng.poisson(np.maximum(lam, 0.0))
    owner = np.repeat(np.arange(B), counts)
    M = len(owner)
    visits = np.zeros((B, n))
    if M == 0:
        return owner, np.zeros(0, dtype=int), visits, [], tail
    cdf = np.cumsum(traces, axis=1)
    r = rng.random(M) * cdf[owner, -1]
    lengths = (cdf[owner] < r[:, None]).sum(axis=1) + 1
    lengths = np.minimum(lengths, K)
    diagk = np.diagonal(P[owner, lengths], axis1=-2, axis2=-1)
    cb = np.cumsum(diagk, axis=1)
    r = rng.random(M) * cb[:, -1]
    base = np.minimum((cb < r[:, None]).sum(axis=1), n - 1)
    kmax = int(lengths.max())
    skel = np.full((M, kmax), -1)
    skel[:, 0] = base
    cur = base.copy()
    for m in range(kmax - 1):
        act = np.flatnonzero(lengths - m - 1 >= 1)
        if len(act) == 0:
            break
        o = owner[act]
        rem = lengths[act] - m - 1
        wts = Q[o, cur[act], :] * P[o, rem, :, base[act]]
        cw = np.cumsum(wts, axis=1)
        r = rng.random(len(act)) * cw[:, -1]
        nxt = np.minimum((cw < r[:, None]).sum(axis=1), n - 1)
        skel[act, m + 1] = nxt
        cur[act] = nxt
    valid = skel >= 0
    np.add.at(visits, (np.broadcast_to(owner[:, None], skel.shape)[valid], skel[valid]), 1.0)
    return owner, lengths, visits, skel, tail


def sample_quenched_soup(gen: LoopGenerator, alpha: float, rng: np.random.Generator,
                         tol: float = TAIL_TOL) -> LoopSoupSample:
    """One loop soup with intensity α, loops listed explicitly."""
    if alpha < 0:
        raise LoopSoupError("intensity must be nonnegative")
    if gen.L.ndim != 2:
        raise LoopSoupError("pass a single generator")
    d = gen.diag
    trivial = rng.gamma(alpha, 1.0 / d) if alpha > 0 else np.zeros(gen.n)
    if alpha == 0:
        return LoopSoupSample([], trivial, alpha)
    owner, lengths, visits, skel, _ = _sample_skeletons(gen.Q[None], alpha, rng, tol)
    loops = []
    for m in range(len(owner)):
        sk = skel[m, : lengths[m]]
        loops.append(BasedLoop(sk, rng.exponential(1.0 / d[sk])))
    return LoopSoupSample(loops, trivial, alpha)


def sample_occupations(gen: LoopGenerator, alpha: float, count: int | None, rng: np.random.Generator,
                       tol: float = TAIL_TOL, chunk: int = 20_000) -> np.ndarray:
    """Occupation fields of independent soups, shape (B, n).

    A batched generator gives one soup per environment; a single generator
    with ``count`` gives ``count`` soups.
    """
    if alpha < 0:
        raise LoopSoupError("intensity must be nonnegative")
    Q = gen.Q
    d = gen.diag
    if Q.ndim == 2:
        if count is None:
            raise LoopSoupError("count is required for a single generator")
        Q = np.broadcast_to(Q, (count,) + Q.shape)
        d = np.broadcast_to(d, (count, gen.n))
    B = Q.shape[0]
    out = np.empty((B, gen.n))
    for s in range(0, B, chunk):
        sl = slice(s, s + chunk)
        if alpha == 0:
            out[sl] = 0.0
            continue
        _, _, visits, _, _ = _sample_skeletons(np.ascontiguousarray(Q[sl]), alpha, rng, tol)
        out[sl] = rng.gamma(alpha + visits, 1.0 / d[sl])
    return out


def soup_laplace_oracle(gen: LoopGenerator, k, alpha: float = 1.0) -> np.ndarray:
    """``E exp(-⟨k, occupation⟩) = (det L / det(L + diag k))^α``."""
    L = gen.L
    kk = np.broadcast_to(np.asarray(k, dtype=float), (gen.n,))
    s0, l0 = np.linalg.slogdet(L)
    s1, l1 = np.linalg.slogdet(L + np.diag(kk))
    if np.any(s0 <= 0) or np.any(s1 <= 0):
        raise LoopSoupError("singular or indefinite generator")
    return np.exp(alpha * (l0 - l1))


def gaussian_laplace(A: np.ndarray, k) -> np.ndarray:
    """``E exp(-⟨k, x² + y²⟩)`` for two independent fields with precision A: ``det A / det(A + 2k)``."""
    A = np.asarray(A, dtype=float)
    kk = np.broadcast_to(np.asarray(k, dtype=float), (A.shape[-1],))
    return np.linalg.det(A) / np.linalg.det(A + 2 * np.diag(kk))


@dataclass
class SoupEstimate:
    mean: float
    stderr: float
    samples: int


def reinforced_soup_expectation(g: AugmentedGraph, observable: Callable[[np.ndarray], np.ndarray],
                                alpha: float = 1.0, outer: int = 10_000, inner: int = 1,
                                rng: np.random.Generator | None = None,
                                cfg: MCMCConfig | None = None) -> SoupEstimate:
    """Annealed soup expectation: u ~ ν_δ^{W̃,1}, then ``inner`` soups per u.

    The standard error uses 50 batch means over the MCMC output, which
    accounts for chain autocorrelation.
    """
    if alpha <= 0:
        raise LoopSoupError("intensity must be positive")
    rng = rng or np.random.default_rng(0)
    u = nu_sample(g, outer, root=g.delta, cfg=cfg)
    gen = loop_generator(g, u)
    if inner > 1:
        gen = LoopGenerator(np.repeat(gen.L, inner, axis=0), np.repeat(gen.u, inner, axis=0))
    occ = sample_occupations(gen, alpha, None, rng)
    vals = np.asarray(observable(occ), dtype=float).reshape(outer, inner).mean(axis=1)
    batches = min(50, outer)
    means = np.array([b.mean() for b in np.array_split(vals, batches)])
    return SoupEstimate(float(vals.mean()), float(means.std(ddof=1) / math.sqrt(batches)), outer * inner)


def write_occupations_csv(path, occ: np.ndarray) -> Path:
    path = Path(path)
    occ = np.atleast_2d(occ)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"L{i}" for i in range(occ.shape[1])])
        for row in occ:
            wr.writerow([repr(float(v)) for v in row])
    return path
