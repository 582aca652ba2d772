"""Tensor quadrature over per-vertex bosonic planes and over environments.

Three schemes are available for the (x_i, y_i) planes:

``sinh``
    Trapezoid rule in hyperbolic coordinates
    ``(x, y) = θ_b(sinh p, cosh p sinh q)``, where θ_b is a Lorentz boost.
    Integrands of the hyperbolic model decay doubly exponentially in (p, q),
    so the trapezoid rule converges geometrically.
``hermite``
    Gauss-Hermite nodes after an affine rescaling ``x = c + σ t``.
    Exact for Gaussian integrands matched to (c, σ).
``grid``
    Cartesian trapezoid rule ``x = c + σ t`` on ``|t| <= extent``. For
    Gaussian-type integrands narrower than (c, σ) it converges much faster
    than Gauss-Hermite at equal node count.
``mc``
    Importance sampling with Gaussian (p, q) proposals in the same
    hyperbolic coordinates (heavy tails in x, y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when refining the rule moves the result by more than the tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    scheme: str = "sinh"
    nodes: int = 30
    extent: float = 4.5
    scale: float = 1.0
    tol: float = 1e-7
    check: bool = True
    samples: int = 200_000
    seed: int = 0
    chunk: int = 8192
    prune: float = 1e-18

    def __post_init__(self):
        if self.scheme not in ("sinh", "hermite", "grid", "mc"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.nodes < 8:
            raise ValueError("at least 8 nodes per axis are required")

    def refined(self, dims: int) -> "QuadratureSpec":
        """Rule with (at least) twice as many nodes in total."""
        if self.scheme == "mc":
            return replace(self, samples=2 * self.samples, seed=self.seed + 1)
        factor = 2.0 ** (1.0 / max(dims, 1))
        if self.scheme in ("sinh", "grid"):
            step = 2 * self.extent / (self.nodes - 1)
            extent = self.extent + 0.5
            nodes = int(math.ceil(2 * extent / (step / factor))) + 1
            # odd counts keep q = 0 on the grid (needed by half_plane rules)
            nodes += 1 - nodes % 2
            return replace(self, nodes=nodes, extent=extent)
        return replace(self, nodes=int(math.ceil(self.nodes * factor)) + 1)


@dataclass(frozen=True)
class PlaneRule:
    """Nodes and weights for ``∫ f(x, y) dx dy`` on one vertex plane."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


def hyperbolic_point(p, q, boost: float = 0.0):
    """Map (p, q) to (x, y, z) on the hyperboloid, then apply the boost."""
    x0 = np.sinh(p)
    y = np.cosh(p) * np.sinh(q)
    z0 = np.cosh(p) * np.cosh(q)
    cb, sb = math.cosh(boost), math.sinh(boost)
    return x0 * cb + z0 * sb, y, z0 * cb + x0 * sb


def _cartesian_rule(t, wt, center, scale, factor, half_plane) -> PlaneRule:
    # symmetric 1D rule -> product rule on the plane; the half-plane version
    # keeps t_y >= 0 and doubles the weight off the axis
    tx, ty = np.meshgrid(t, t, indexing="ij")
    wx, wy = np.meshgrid(wt, wt, indexing="ij")
    w = wx * wy
    if half_plane:
        keep = ty >= 0
        w = np.where(ty > 0, 2.0 * w, w)
        tx, ty, w = tx[keep], ty[keep], w[keep]
    (cx, cy), (sx, sy) = center, scale
    return PlaneRule(cx + sx * factor * tx.ravel(), cy + sy * factor * ty.ravel(),
                     w.ravel() * sx * sy * factor ** 2)


def plane_rule(quad: QuadratureSpec, center=(0.0, 0.0), scale=1.0, boost: float = 0.0,
               rng: np.random.Generator | None = None, half_plane: bool = False) -> PlaneRule:
    """Nodes for one plane.

    ``half_plane=True`` keeps only ``y >= 0`` with doubled weights (the
    ``y = 0`` line keeps its weight); valid for integrands even in y.
    """
    if half_plane and quad.scheme == "mc":
        raise ValueError("half-plane rules need a deterministic scheme")
    sx, sy = (scale, scale) if np.isscalar(scale) else scale
    cx, cy = center
    if quad.scheme == "hermite":
        t, wt = np.polynomial.hermite_e.hermegauss(quad.nodes)
        # weight e^{-t^2/2} is divided back out
        wt = wt * np.exp(0.5 * t * t)
        return _cartesian_rule(t, wt, (cx, cy), (sx, sy), quad.scale, half_plane)
    if quad.scheme == "grid":
        t = np.linspace(-quad.extent, quad.extent, quad.nodes)
        return _cartesian_rule(t, np.full(t.size, t[1] - t[0]), (cx, cy), (sx, sy), quad.scale, half_plane)
    if quad.scheme == "sinh":
        t = np.linspace(-quad.extent, quad.extent, quad.nodes)
        h = t[1] - t[0]
        p, q = np.meshgrid(t, t, indexing="ij")
        p, q = p.ravel(), q.ravel()
        w = np.full(p.shape, h * h)
        if half_plane:
            if quad.nodes % 2 == 0:
                raise ValueError("half-plane rules need an odd node count")
            keep = q >= -1e-12 * h
            w = np.where(np.abs(q) < 1e-12 * h, w, 2.0 * w)[keep]
            p, q = p[keep], np.abs(q[keep])
    else:
        rng = rng or np.random.default_rng(quad.seed)
        sd = quad.extent / 3.0
        p = rng.normal(0, sd, quad.samples)
        q = rng.normal(0, sd, quad.samples)
        dens = np.exp(-0.5 * (p * p + q * q) / sd ** 2) / (2 * np.pi * sd * sd)
        w = 1.0 / (dens * quad.samples)
    x, y, z = hyperbolic_point(p, q, boost)
    # dx dy / z = cosh p dp dq is boost invariant
    jac = np.cosh(p) * z
    return PlaneRule(cx + sx * x, cy + sy * y, w * jac * sx * sy)


def iter_tensor(rules: Sequence[PlaneRule], chunk: int, joint: bool = False):
    """Yield ``(X, Y, W)`` blocks of the tensor product of the plane rules.

    With ``joint=True`` (Monte Carlo) the rules are zipped instead of
    multiplied out.
    """
    m = len(rules)
    if m == 0:
        yield np.zeros((1, 0)), np.zeros((1, 0)), np.ones(1)
        return
    if joint:
        size = len(rules[0].w)
        for start in range(0, size, chunk):
            sl = slice(start, start + chunk)
            X = np.stack([r.x[sl] for r in rules], axis=1)
            Y = np.stack([r.y[sl] for r in rules], axis=1)
            W = np.prod(np.stack([r.w[sl] for r in rules], axis=1), axis=1)
            yield X, Y, W
        return
    sizes = [len(r.w) for r in rules]
    total = int(np.prod(sizes))
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, sizes)
        X = np.stack([r.x[k] for r, k in zip(rules, idx)], axis=1)
        Y = np.stack([r.y[k] for r, k in zip(rules, idx)], axis=1)
        W = np.prod(np.stack([r.w[k] for r, k in zip(rules, idx)], axis=1), axis=1)
        yield X, Y, W


def _screened(nodes, screen, prune: float, chunk: int):
    """Drop nodes whose screened weight ``|W screen(X, Y)|`` is below ``prune`` times the largest."""
    blocks = list(nodes)
    mags = [np.abs(W * screen(X, Y)) for X, Y, W in blocks]
    top = max(float(m.max()) for m in mags) if mags else 0.0
    keep = [(X[m > prune * top], Y[m > prune * top], W[m > prune * top]) for (X, Y, W), m in zip(blocks, mags)]
    X = np.concatenate([k[0] for k in keep])
    Y = np.concatenate([k[1] for k in keep])
    W = np.concatenate([k[2] for k in keep])
    for start in range(0, len(W), chunk):
        yield X[start:start + chunk], Y[start:start + chunk], W[start:start + chunk]


def integrate_planes(integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
                     make_nodes: Callable[[QuadratureSpec], object],
                     quad: QuadratureSpec, dims: int,
                     screen: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None) -> tuple[float, float]:
    """Integrate over a node set and certify by refinement.

    ``make_nodes(spec)`` returns either a list of :class:`PlaneRule` (one per
    vertex, combined as a tensor product) or an iterator of ``(X, Y, W)``
    blocks. ``screen(X, Y)``, if given, is a cheap real bound on the size of
    the integrand; nodes where it is negligible (``quad.prune``) are skipped.
    Returns ``(value, change_under_refinement)``; raises
    :class:`QuadratureError` if the change exceeds ``quad.tol`` relative to
    ``max(|value|, 1)``.
    """
    def run(spec):
        nodes = make_nodes(spec)
        if isinstance(nodes, (list, tuple)):
            nodes = iter_tensor(nodes, spec.chunk, joint=spec.scheme == "mc")
        if screen is not None and spec.prune > 0:
            nodes = _screened(nodes, screen, spec.prune, spec.chunk)
        parts = [np.dot(W, integrand(X, Y)) for X, Y, W in nodes]
        # pairwise summation keeps the result independent of chunk boundaries
        return float(np.sum(np.array(parts)))

    value = run(quad)
    if not quad.check:
        return value, float("nan")
    finer = run(quad.refined(2 * dims))
    change = abs(finer - value)
    if change > quad.tol * max(abs(finer), 1.0):
        raise QuadratureError(
            f"quadrature not converged: {value!r} vs refined {finer!r} (tol {quad.tol})")
    return finer, change


def line_rule(nodes: int, extent: float, center: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid nodes on ``[center - extent, center + extent]``."""
    t = np.linspace(center - extent, center + extent, nodes)
    w = np.full(nodes, t[1] - t[0])
    return t, w


def tensor_line_rule(dims: int, nodes: int, extent: float, center=None):
    """Tensor trapezoid rule in ``dims`` dimensions, returned as flat arrays."""
    center = np.zeros(dims) if center is None else np.asarray(center, dtype=float)
    if dims == 0:
        return np.zeros((1, 0)), np.ones(1)
    axes = [line_rule(nodes, extent, c) for c in center]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, w
