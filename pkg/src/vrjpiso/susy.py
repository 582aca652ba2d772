"""Expectations of the H^{2|2} model and of the supersymmetric free field.

Both are computed the same way: bosonic coordinates (x_i, y_i) of the free
vertices run over a tensor quadrature rule, and at every node the integrand
(observable times Boltzmann weight times measure density) is assembled as a
batched Grassmann element whose top coefficient is extracted by the Berezin
integral.

Observables are plain callables taking a :class:`SuperField` and returning a
:class:`~vrjpiso.grassmann.GrassmannElement` (or a bosonic array).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grassmann import GrassmannElement, berezin_integrate, exp, sqrt
from .graph import AugmentedGraph, WeightedGraph, full_weights
from .quadrature import QuadratureSpec, integrate_planes, plane_rule

Observable = Callable[["SuperField"], object]

H22_QUAD = QuadratureSpec(scheme="sinh", nodes=31, extent=4.5, tol=1e-7)
FREE_QUAD = QuadratureSpec(scheme="hermite", nodes=40, tol=1e-7)
# one free plane is cheap, so default to a rule that also resolves narrow observables
FREE_QUAD_PLANE = QuadratureSpec(scheme="hermite", nodes=72, tol=1e-9)


class SusyError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    """Pin vertex ``pinned`` at the boosted zero vector θ_s 0.

    For the hyperbolic model the pinned value is (sinh s, 0, cosh s, 0, 0);
    for the free field it is (sinh s, 0, 0, 0). ``pinned=None`` means the
    cemetery δ of an augmented graph.
    """

    pinned: int | None = None
    s: float = 0.0

    def h22_value(self) -> tuple[float, float, float]:
        return math.sinh(self.s), 0.0, math.cosh(self.s)

    def free_value(self) -> tuple[float, float]:
        return math.sinh(self.s), 0.0


class SuperField:
    """Per-vertex field components, every one a (batched) Grassmann element.

    ``x``, ``y``, ``xi``, ``eta`` are lists indexed by vertex of the full
    vertex set; pinned vertices carry constant values and zero fermions.
    ``z`` defaults to ``sqrt(1 + x² + y² + 2ξη)``.
    """

    def __init__(self, x, y, xi, eta, z=None):
        self.x, self.y, self.xi, self.eta = list(x), list(y), list(xi), list(eta)
        self._z = list(z) if z is not None else None

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def z(self) -> list:
        if self._z is None:
            self._z = [sqrt(1.0 + self.x[i] * self.x[i] + self.y[i] * self.y[i]
                            + 2.0 * (self.xi[i] * self.eta[i]))
                       for i in range(self.n)]
        return self._z

    def square(self, i: int):
        """``Ψ_i·Ψ_i = x² + y² + 2ξη`` (so that z² = 1 + Ψ_i²)."""
        return self.x[i] * self.x[i] + self.y[i] * self.y[i] + 2.0 * (self.xi[i] * self.eta[i])

    def free_dot(self, i: int, j: int):
        return (self.x[i] * self.x[j] + self.y[i] * self.y[j]
                + self.xi[i] * self.eta[j] + self.xi[j] * self.eta[i])

    def h22_dot(self, i: int, j: int):
        return self.free_dot(i, j) - self.z[i] * self.z[j]

    def boosted(self, s: float) -> "SuperField":
        return boost(self, s)

    def rotated(self, alpha: float) -> "SuperField":
        return rotate(self, alpha)

    def scaled(self, u) -> "SuperField":
        """The field ``e^u Ψ`` (all four free-field components scaled)."""
        eu = np.exp(np.asarray(u, dtype=float))
        return SuperField([self.x[i] * eu[i] for i in range(self.n)],
                          [self.y[i] * eu[i] for i in range(self.n)],
                          [self.xi[i] * eu[i] for i in range(self.n)],
                          [self.eta[i] * eu[i] for i in range(self.n)])


def boost(field, s: float):
    """Lorentz boost θ_s in the xz-plane.

    Accepts a :class:`SuperField` or a plain point ``(x, y, z)`` (arrays or
    floats, last axis indexing the components).
    """
    c, sh = math.cosh(s), math.sinh(s)
    if isinstance(field, SuperField):
        z = field.z
        return SuperField([field.x[i] * c + z[i] * sh for i in range(field.n)], field.y,
                          field.xi, field.eta,
                          z=[z[i] * c + field.x[i] * sh for i in range(field.n)])
    x, y, z = field[:3]
    return (x * c + z * sh, y, z * c + x * sh) + tuple(field[3:])


def rotate(field, alpha: float):
    """Euclidean rotation R_α in the xy-plane."""
    c, s = math.cos(alpha), math.sin(alpha)
    if isinstance(field, SuperField):
        return SuperField([field.x[i] * c + field.y[i] * s for i in range(field.n)],
                          [field.y[i] * c - field.x[i] * s for i in range(field.n)],
                          field.xi, field.eta, z=field._z)
    x, y = field[:2]
    return (x * c + y * s, y * c - x * s) + tuple(field[2:])


# field construction ---------------------------------------------------------

def _build_field(n_total: int, free: Sequence[int], X: np.ndarray, Y: np.ndarray,
                 pinned: int | None, pinned_xyz, hyperbolic: bool) -> SuperField:
    m = len(free)
    zero = GrassmannElement.scalar(m, 0.0)
    x, y, xi, eta = [zero] * n_total, [zero] * n_total, [zero] * n_total, [zero] * n_total
    for k, i in enumerate(free):
        x[i] = GrassmannElement.scalar(m, X[:, k])
        y[i] = GrassmannElement.scalar(m, Y[:, k])
        xi[i] = GrassmannElement.xi(m, k)
        eta[i] = GrassmannElement.eta(m, k)
    field = SuperField(x, y, xi, eta)
    if pinned is not None:
        px, py, pz = pinned_xyz
        field.x[pinned] = GrassmannElement.scalar(m, px)
        field.y[pinned] = GrassmannElement.scalar(m, py)
        zs = field.z
        zs[pinned] = GrassmannElement.scalar(m, pz)
    return field


def h22_field(g: WeightedGraph | AugmentedGraph, bc: BoundaryCondition | None,
              x, y) -> SuperField:
    """Field at bosonic point ``(x, y)`` (arrays ``(..., n_free)``) of the free vertices."""
    n_total = full_weights(g).shape[0]
    pinned = _pinned_index(g, bc)
    free = [i for i in range(n_total) if i != pinned]
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    bc = bc or BoundaryCondition()
    return _build_field(n_total, free, X, Y, pinned, bc.h22_value(), True)


def lorentz_translate(local, center):
    """Apply the pure Lorentz boost taking (0, 0, 1) to ``center``.

    The pure boost depends smoothly on the center, which keeps quadrature
    integrands smooth in chart coordinates.
    """
    x, y, z = local
    cx, cy, cz = (np.asarray(c, dtype=float) for c in center)
    dot = cx * x + cy * y
    t = dot / (1.0 + cz) + z
    return x + cx * t, y + cy * t, cz * z + dot


def _pinned_index(g, bc: BoundaryCondition | None) -> int | None:
    if bc is None:
        return None
    if bc.pinned is None:
        if not isinstance(g, AugmentedGraph):
            raise SusyError("boundary at δ requires an augmented graph")
        return g.delta
    n_total = full_weights(g).shape[0]
    if not 0 <= bc.pinned < n_total:
        raise SusyError(f"pinned vertex {bc.pinned} outside the graph")
    return bc.pinned


def h22_energy(field: SuperField, g: WeightedGraph | AugmentedGraph) -> GrassmannElement:
    """``½ Φ Δ Φ = -Σ_{ij∈E} W_ij (Φ_i·Φ_j + 1)`` over every edge of ``g`` (δ included)."""
    w = full_weights(g)
    total = None
    for i in range(w.shape[0]):
        for j in range(i + 1, w.shape[0]):
            if w[i, j] > 0:
                term = (field.h22_dot(i, j) + 1.0) * (-w[i, j])
                total = term if total is None else total + term
    if total is None:
        return field.x[0] * 0.0
    return total


def free_energy(field: SuperField, a: np.ndarray) -> GrassmannElement:
    """``½ Σ_ij A_ij Ψ_i·Ψ_j`` over the full vertex set."""
    n = a.shape[0]
    total = field.x[0] * 0.0
    for i in range(n):
        if a[i, i]:
            total = total + field.free_dot(i, i) * (0.5 * a[i, i])
        for j in range(i + 1, n):
            if a[i, j] or a[j, i]:
                total = total + field.free_dot(i, j) * (0.5 * (a[i, j] + a[j, i]))
    return total


def _as_element(value, like: GrassmannElement) -> GrassmannElement:
    if isinstance(value, GrassmannElement):
        return value
    return GrassmannElement.scalar(like.n_pairs, np.broadcast_to(np.asarray(value, dtype=float),
                                                                 like.batch_shape))


# expectations -------------------------------------------------------------------

def h22_expectation(obs: Observable, g: WeightedGraph | AugmentedGraph,
                    bc: BoundaryCondition | None = None, quad: QuadratureSpec | None = None,
                    assume_integrable: bool = False, return_error: bool = False,
                    y_symmetric: bool = False):
    """``⟨obs⟩`` for the H^{2|2} model on ``g`` with the given boundary.

    Augmented graphs default to pinning δ at θ_s 0; for a plain graph the
    pinned vertex must be given. Unpinned (non-normalizable) expectations are
    refused unless the caller vouches for integrability. Observables that are
    even under ``y -> -y`` (all Laplace and x-monomial observables) may set
    ``y_symmetric`` to halve the work.
    """
    quad = quad or H22_QUAD
    if bc is None and isinstance(g, AugmentedGraph):
        bc = BoundaryCondition()
    if bc is None and not assume_integrable:
        raise SusyError("unpinned H22 expectation is not normalizable; "
                        "pin a vertex or pass assume_integrable=True")
    pinned = _pinned_index(g, bc)
    w = full_weights(g)
    n_total = w.shape[0]
    free = [i for i in range(n_total) if i != pinned]
    m = len(free)
    pinned_xyz = bc.h22_value() if bc is not None else None
    norm = (2 * np.pi) ** (-m)

    def to_global(Xl, Yl):
        # chart coordinates centred at the pinned point -> global points
        X = np.empty_like(Xl)
        Y = np.empty_like(Yl)
        Z = np.empty_like(Xl)
        jac = np.ones(Xl.shape[0])
        for k in range(m):
            xl, yl = Xl[:, k], Yl[:, k]
            zl = np.sqrt(1.0 + xl * xl + yl * yl)
            if pinned is None:
                gx, gy, gz = xl, yl, zl
            else:
                gx, gy, gz = lorentz_translate((xl, yl, zl), pinned_xyz)
            X[:, k], Y[:, k], Z[:, k] = gx, gy, gz
            # dX dY / Z = dx dy / z
            jac = jac * gz / zl
        return X, Y, Z, jac

    edges = [(i, j, w[i, j]) for i in range(n_total) for j in range(i + 1, n_total) if w[i, j] > 0]
    slot = {v: k for k, v in enumerate(free)}

    def screen(Xl, Yl):
        # bosonic part of the density; fermions only add polynomial factors
        X, Y, Z, jac = to_global(Xl, Yl)

        def comp(i):
            if i in slot:
                k = slot[i]
                return X[:, k], Y[:, k], Z[:, k]
            return pinned_xyz
        energy = np.zeros(Xl.shape[0])
        for i, j, wij in edges:
            xi, yi, zi = comp(i)
            xj, yj, zj = comp(j)
            energy += wij * (zi * zj - xi * xj - yi * yj - 1.0)
        return np.exp(-energy) * jac / np.prod(Z, axis=1)

    def integrand(Xl, Yl):
        X, Y, _, jac = to_global(Xl, Yl)
        field = _build_field(n_total, free, X, Y, pinned, pinned_xyz, True)
        dens = exp(-h22_energy(field, g)) * (norm * jac)
        for i in free:
            dens = dens / field.z[i]
        val = _as_element(obs(field), dens) * dens
        if m == 0:
            return np.atleast_1d(val.body)
        return berezin_integrate(val)

    def make_rules(spec):
        rng = np.random.default_rng(spec.seed)
        # the global reflection y -> -y fixes the pinned point, so one
        # vertex may be restricted to its upper half plane
        return [plane_rule(spec, rng=rng, half_plane=y_symmetric and k == 0 and spec.scheme == "sinh")
                for k in range(m)]

    value, err = integrate_planes(integrand, make_rules, quad, m, screen=screen if m else None)
    return (value, err) if return_error else value


def free_expectation(obs: Observable, a: np.ndarray, pinned: int | None = None, s: float = 0.0,
                     quad: QuadratureSpec | None = None, assume_integrable: bool = False,
                     return_error: bool = False, y_symmetric: bool = False):
    """``⟦obs⟧`` for the susy free field with quadratic form ``a``.

    ``a`` is a symmetric matrix over the full vertex set. With ``pinned`` set,
    that vertex is held at θ_s 0 = (sinh s, 0, 0, 0) and the remaining block
    must be positive definite; with ``pinned=None`` the whole form must be
    (the massive case ``Δ_W + h``). ``y_symmetric`` halves the work for
    observables even under ``y -> -y``.
    """
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T):
        raise SusyError("generator must be symmetric (use the B^u form and e^u scaling otherwise)")
    n_total = a.shape[0]
    free = [i for i in range(n_total) if i != pinned]
    m = len(free)
    quad = quad or (FREE_QUAD_PLANE if m <= 1 else FREE_QUAD)
    block = a[np.ix_(free, free)]
    xs = math.sinh(s) if pinned is not None else 0.0
    try:
        np.linalg.cholesky(block)
        pd = True
    except np.linalg.LinAlgError:
        pd = False
    if not pd and not assume_integrable:
        raise SusyError("bosonic quadratic form is not positive definite")
    if pd:
        cov = np.linalg.inv(block)
        mean = -cov @ a[free, pinned] * xs if pinned is not None else np.zeros(m)
        scales = np.sqrt(np.diag(cov))
    else:
        mean, scales = np.zeros(m), np.ones(m)
    norm = (2 * np.pi) ** (-m)

    def screen(X, Y):
        xf = np.zeros((X.shape[0], n_total))
        yf = np.zeros((X.shape[0], n_total))
        xf[:, free], yf[:, free] = X, Y
        if pinned is not None:
            xf[:, pinned] = xs
        q = np.sum((xf @ a) * xf + (yf @ a) * yf, axis=1)
        return np.exp(-0.5 * q)

    def integrand(X, Y):
        field = _build_field(n_total, free, X, Y, pinned, (xs, 0.0, math.cosh(s)), False)
        dens = exp(-free_energy(field, a)) * norm
        val = _as_element(obs(field), dens) * dens
        if m == 0:
            return np.atleast_1d(val.body)
        return berezin_integrate(val)

    def make_rules(spec):
        rng = np.random.default_rng(spec.seed)
        half = y_symmetric and spec.scheme != "mc"
        return [plane_rule(spec, center=(mean[k], 0.0), scale=scales[k], rng=rng, half_plane=half and k == 0)
                for k in range(m)]

    value, err = integrate_planes(integrand, make_rules, quad, m, screen=screen if m and pd else None)
    return (value, err) if return_error else value


# observable helpers ------------------------------------------------------------

def laplace_z(k, vertices: Sequence[int] | None = None) -> Observable:
    """``exp(-Σ_i k_i (z_i - 1))``."""
    def obs(f: SuperField):
        idx = range(f.n) if vertices is None else vertices
        kk = np.broadcast_to(np.asarray(k, dtype=float), (len(list(idx)),))
        expo = None
        for kv, i in zip(kk, idx):
            if kv:
                term = (f.z[i] - 1.0) * kv
                expo = term if expo is None else expo + term
        return 1.0 if expo is None else exp(-expo)
    return obs


def laplace_square(k, vertices: Sequence[int] | None = None) -> Observable:
    """``exp(-Σ_i k_i (x_i² + y_i²))``."""
    def obs(f: SuperField):
        idx = list(range(f.n) if vertices is None else vertices)
        kk = np.broadcast_to(np.asarray(k, dtype=float), (len(idx),))
        expo = None
        for kv, i in zip(kk, idx):
            if kv:
                term = (f.x[i] * f.x[i] + f.y[i] * f.y[i]) * kv
                expo = term if expo is None else expo + term
        return 1.0 if expo is None else exp(-expo)
    return obs


def laplace_z2(k, vertices: Sequence[int] | None = None) -> Observable:
    """``exp(-Σ_i k_i (z_i² - 1))`` with ``z_i² - 1 = x_i² + y_i² + 2ξ_iη_i``."""
    def obs(f: SuperField):
        idx = list(range(f.n) if vertices is None else vertices)
        kk = np.broadcast_to(np.asarray(k, dtype=float), (len(idx),))
        expo = None
        for kv, i in zip(kk, idx):
            if kv:
                term = f.square(i) * kv
                expo = term if expo is None else expo + term
        return 1.0 if expo is None else exp(-expo)
    return obs


def times_x(a: int, b: int | None, obs: Observable | None = None) -> Observable:
    """``x_a x_b · obs`` (``b=None`` drops the second factor)."""
    def wrapped(f: SuperField):
        out = f.x[a] if b is None else f.x[a] * f.x[b]
        return out if obs is None else out * obs(f)
    return wrapped
