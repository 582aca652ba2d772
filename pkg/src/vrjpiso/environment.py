"""The mixing measure ν of the time-changed VRJP.

Environments ``u`` live on the full vertex set of a graph (Ṽ for augmented
graphs, δ last) and are rooted: ``u[root] == 0``. Densities are with respect
to Lebesgue measure on the non-root coordinates.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grassmann import GrassmannElement, exp as gexp
from .graph import AugmentedGraph, WeightedGraph, full_weights, tree_determinant
from .quadrature import QuadratureError, tensor_line_rule

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class MixingMeasureError(ValueError):
    pass


@dataclass(frozen=True)
class Environment:
    u: np.ndarray
    root: int = 0

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 1:
            raise MixingMeasureError("an environment is a vector")
        if not 0 <= self.root < len(u):
            raise MixingMeasureError("root outside the vertex set")
        if u[self.root] != 0.0:
            raise MixingMeasureError("environment must vanish at its root")
        if not np.all(np.isfinite(u)):
            raise MixingMeasureError("environment must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def rerooted(self, new_root: int) -> "Environment":
        return change_root_transform(self, self.root, new_root)


@dataclass(frozen=True)
class MCMCConfig:
    """Adaptive random-walk Metropolis settings.

    ``chains`` independent chains run side by side (vectorized); each is
    seeded from ``seed``. The proposal scale is tuned during burn-in towards
    ``target`` acceptance.
    """

    step: float = 1.0
    burn_in: int = 2000
    thin: int = 5
    seed: int = 0
    chains: int = 64
    target: float = 0.4


def _edge_arrays(w: np.ndarray):
    iu, ju = np.triu_indices(w.shape[0], 1)
    mask = w[iu, ju] > 0
    return iu[mask], ju[mask], w[iu, ju][mask]


def nu_log_density(u, g: WeightedGraph | AugmentedGraph, z=None, root: int = 0) -> np.ndarray:
    """Log density of ν_root^{W,z} at ``u`` (batch axes allowed; z real)."""
    w = full_weights(g)
    n = w.shape[0]
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != n:
        raise MixingMeasureError(f"environment needs {n} entries")
    z = np.ones(n) if z is None else np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise MixingMeasureError("initial local times must be positive")
    ii, jj, ww = _edge_arrays(w)
    du = u[..., ii] - u[..., jj]
    zi, zj = z[..., ii], z[..., jj]
    expo = -0.5 * np.sum(ww * (np.exp(du) * zj ** 2 + np.exp(-du) * zi ** 2 - 2 * zi * zj), axis=-1)
    logd = 0.5 * np.log(tree_determinant(g, u))
    others = [i for i in range(n) if i != root]
    logz = np.log(z)
    rest = np.sum(logz[..., others] - u[..., others], axis=-1) - len(others) * LOG_SQRT_2PI
    return expo + logd + rest


def nu_density(u, g: WeightedGraph | AugmentedGraph, z=None, root: int = 0):
    """Density of ν_root^{W,z}; ``z`` may hold Grassmann elements.

    ``z`` is a sequence over the full vertex set whose entries are floats,
    arrays or :class:`GrassmannElement` (super-valued initial local times).
    Batch axes of ``u`` and of the entries of ``z`` must broadcast.
    """
    w = full_weights(g)
    n = w.shape[0]
    u = np.asarray(u, dtype=float)
    if z is None or not any(isinstance(v, GrassmannElement) for v in z):
        return np.exp(nu_log_density(u, g, None if z is None else np.asarray(z, dtype=float), root))
    ii, jj, ww = _edge_arrays(w)
    expo = None
    for i, j, wij in zip(ii, jj, ww):
        d = u[..., i] - u[..., j]
        term = (z[j] * z[j]) * (np.exp(d) * wij) + (z[i] * z[i]) * (np.exp(-d) * wij) - (z[i] * z[j]) * (2 * wij)
        expo = term if expo is None else expo + term
    dens = gexp(expo * -0.5) * np.sqrt(tree_determinant(g, u))
    for i in range(n):
        if i != root:
            dens = dens * z[i] * (np.exp(-u[..., i]) / math.sqrt(2 * math.pi))
    return dens


def change_root_transform(u, old_root: int, new_root: int) -> Environment:
    """``v_i = u_i - u_new``; the result is rooted at ``new_root``."""
    if isinstance(u, Environment):
        old_root = u.root if old_root is None else old_root
        u = u.u
    u = np.asarray(u, dtype=float)
    if not (0 <= old_root < len(u) and 0 <= new_root < len(u)):
        raise MixingMeasureError("root outside the vertex set")
    v = u - u[new_root]
    v[new_root] = 0.0
    return Environment(v, new_root)


def reroot_batch(u: np.ndarray, new_root: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u - u[..., new_root:new_root + 1]


# quadrature --------------------------------------------------------------------

@dataclass(frozen=True)
class EnvQuadrature:
    """Tensor trapezoid rule on the non-root coordinates of u."""

    step: float = 0.1
    extent: float = 10.0
    tol: float = 1e-8
    check: bool = True

    def nodes(self, n: int, root: int, center=None):
        dims = n - 1
        k = int(math.ceil(self.extent / self.step))
        pts, w = tensor_line_rule(dims, 2 * k + 1, k * self.step,
                                  None if center is None else np.delete(np.asarray(center, float), root))
        u = np.zeros((len(w), n))
        others = [i for i in range(n) if i != root]
        u[:, others] = pts
        return u, w


def nu_quadrature(g: WeightedGraph | AugmentedGraph, F: Callable[[np.ndarray], np.ndarray] | None = None,
                  z=None, root: int = 0, quad: EnvQuadrature | None = None, center=None,
                  return_error: bool = False, chunk: int = 200_000):
    """``∫ F(u) ν_root^{W,z}(du)`` by the trapezoid rule (F defaults to 1).

    The rule is refined once (step divided by 2^{1/d}, extent + 1) and the
    change is checked against ``quad.tol``.
    """
    quad = quad or EnvQuadrature()
    n = full_weights(g).shape[0]

    def run(q):
        u, w = q.nodes(n, root, center)
        total = []
        for s in range(0, len(w), chunk):
            uu = u[s:s + chunk]
            val = np.exp(nu_log_density(uu, g, z, root))
            if F is not None:
                val = val * F(uu)
            total.append(np.dot(w[s:s + chunk], val))
        return float(np.sum(total))

    value = run(quad)
    if not quad.check or n == 1:
        return (value, 0.0) if return_error else value
    dims = n - 1
    finer = run(EnvQuadrature(quad.step / 2 ** (1 / dims), quad.extent + 1.0, quad.tol, False))
    change = abs(finer - value)
    if change > quad.tol * max(abs(finer), 1.0):
        raise QuadratureError(f"environment quadrature not converged: {value!r} vs {finer!r}")
    return (finer, change) if return_error else finer


# sampling ----------------------------------------------------------------------

@dataclass
class MCMCResult:
    samples: np.ndarray
    acceptance: float
    step: np.ndarray = field(default_factory=lambda: np.ones(0))


def nu_sample(g: WeightedGraph | AugmentedGraph, count: int, z=None, root: int = 0,
              cfg: MCMCConfig | None = None, return_result: bool = False):
    """Draw ``count`` environments from ν_root^{W,z} by random-walk Metropolis.

    Returns an array ``(count, n)`` with a zero root column.
    """
    cfg = cfg or MCMCConfig()
    n = full_weights(g).shape[0]
    others = [i for i in range(n) if i != root]
    d = len(others)
    if d == 0 or count == 0:
        out = np.zeros((count, n))
        return MCMCResult(out, 1.0) if return_result else out
    rng = np.random.default_rng(cfg.seed)
    C = min(cfg.chains, count)
    per_chain = -(-count // C)

    def logp(v):
        u = np.zeros(v.shape[:-1] + (n,))
        u[..., others] = v
        lp = nu_log_density(u, g, z, root)
        if not np.all(np.isfinite(lp)):
            raise MixingMeasureError("non-finite ν density encountered")
        return lp

    x = rng.normal(0.0, 0.3, size=(C, d))
    lp = logp(x)
    scale = np.full(d, cfg.step * 2.38 / math.sqrt(d))
    accepted = 0
    block = 100
    window = 0
    # burn-in with step adaptation
    for it in range(cfg.burn_in):
        prop = x + rng.normal(size=(C, d)) * scale
        lq = logp(prop)
        acc = np.log(rng.random(C)) < lq - lp
        x[acc], lp[acc] = prop[acc], lq[acc]
        window += acc.sum()
        if (it + 1) % block == 0:
            rate = window / (block * C)
            scale *= math.exp(rate - cfg.target)
            window = 0
    out = np.empty((per_chain, C, d))
    total = 0
    for k in range(per_chain):
        for _ in range(cfg.thin):
            prop = x + rng.normal(size=(C, d)) * scale
            lq = logp(prop)
            acc = np.log(rng.random(C)) < lq - lp
            x[acc], lp[acc] = prop[acc], lq[acc]
            accepted += acc.sum()
            total += C
        out[k] = x
    rate = accepted / total
    if not 0.1 <= rate <= 0.7:
        warnings.warn(f"MCMC acceptance rate {rate:.2f} outside [0.1, 0.7]", RuntimeWarning)
    flat = out.reshape(-1, d)[:count]
    samples = np.zeros((count, n))
    samples[:, others] = flat
    return MCMCResult(samples, rate, scale) if return_result else samples


def write_samples_csv(path, samples: np.ndarray, names: Sequence[str] | None = None) -> Path:
    """One row per sample, one column per vertex."""
    path = Path(path)
    samples = np.atleast_2d(samples)
    names = list(names) if names is not None else [f"u{i}" for i in range(samples.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for row in samples:
            wr.writerow([repr(float(v)) for v in row])
    return path
