"""Exact Grassmann algebra over the generators ξ_1, η_1, ..., ξ_n, η_n.

An element is a coefficient vector indexed by bitmasks over the 2n
generators (bit 2i is ξ_i, bit 2i+1 is η_i; a monomial is written in that
canonical order). Coefficient arrays may carry leading batch axes, which is
how quadrature evaluates thousands of bosonic nodes at once.

Berezin integration uses ``∫ ξ_i η_i dξ_i dη_i = -1``, which is the sign that
makes ``∫ exp(-ξ A η) dξ dη = det A`` hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Callable, Sequence

import numpy as np


class GrassmannError(ValueError):
    pass


def _sign(a: int, b: int) -> float:
    # transpositions needed to merge the sorted monomials a and b
    swaps = 0
    bit = 0
    while b >> bit:
        if b >> bit & 1:
            swaps += bin(a >> (bit + 1)).count("1")
        bit += 1
    return -1.0 if swaps & 1 else 1.0


def _grade(mask: int) -> int:
    return bin(mask).count("1")


@lru_cache(maxsize=8192)
def _product_plan(cols_a: tuple, cols_b: tuple):
    """Positions to multiply, output monomials and the signed scatter matrix."""
    ia, jb, out, sign = [], [], [], []
    for p, a in enumerate(cols_a):
        for q, b in enumerate(cols_b):
            if a & b:
                continue
            ia.append(p)
            jb.append(q)
            out.append(a | b)
            sign.append(_sign(a, b))
    cols = tuple(sorted(set(out)))
    where = {c: k for k, c in enumerate(cols)}
    scatter = np.zeros((len(out), len(cols)))
    for r, (c, sg) in enumerate(zip(out, sign)):
        scatter[r, where[c]] = sg
    return np.array(ia, dtype=int), np.array(jb, dtype=int), cols, scatter


@lru_cache(maxsize=8192)
def _sum_plan(cols_a: tuple, cols_b: tuple):
    cols = tuple(sorted(set(cols_a) | set(cols_b)))
    where = {c: k for k, c in enumerate(cols)}
    return cols, np.array([where[c] for c in cols_a], dtype=int), np.array([where[c] for c in cols_b], dtype=int)


class GrassmannElement:
    """Element of the exterior algebra on ``n_pairs`` (ξ, η) generator pairs.

    Only the monomials that can be nonzero are stored: ``cols`` lists their
    bitmasks and ``data[..., k]`` holds the coefficient of ``cols[k]``. The
    full coefficient vector is available as :attr:`coeffs`.
    """

    __array_ufunc__ = None
    __slots__ = ("n_pairs", "cols", "data")

    def __init__(self, n_pairs: int, coeffs, pure: bool = False):
        coeffs = np.asarray(coeffs, dtype=float)
        dim = 1 << (2 * n_pairs)
        if coeffs.shape[-1] != dim:
            raise GrassmannError("coefficient vector has the wrong length")
        if pure:
            cols = (0,)
        else:
            nz = np.any(coeffs.reshape(-1, dim) != 0, axis=0)
            nz[0] = True
            cols = tuple(int(c) for c in np.flatnonzero(nz))
        self.n_pairs = n_pairs
        self.cols = cols
        self.data = coeffs[..., list(cols)]

    @classmethod
    def _make(cls, n_pairs: int, cols: tuple, data: np.ndarray) -> "GrassmannElement":
        out = cls.__new__(cls)
        out.n_pairs = n_pairs
        out.cols = cols
        out.data = data
        return out

    # construction -----------------------------------------------------
    @classmethod
    def scalar(cls, n_pairs: int, value=0.0) -> "GrassmannElement":
        value = np.asarray(value, dtype=float)
        return cls._make(n_pairs, (0,), value[..., None])

    @classmethod
    def monomial(cls, n_pairs: int, bits: Sequence[int], coeff: float = 1.0) -> "GrassmannElement":
        """``coeff`` times the product of the listed generators, in the listed order."""
        out = cls.scalar(n_pairs, coeff)
        for b in bits:
            out = out * cls._generator(n_pairs, b)
        return out

    @classmethod
    def _generator(cls, n_pairs: int, bit: int) -> "GrassmannElement":
        if not 0 <= bit < 2 * n_pairs:
            raise GrassmannError(f"generator {bit} outside the universe")
        return cls._make(n_pairs, (1 << bit,), np.ones(1))

    @classmethod
    def xi(cls, n_pairs: int, i: int) -> "GrassmannElement":
        return cls._generator(n_pairs, 2 * i)

    @classmethod
    def eta(cls, n_pairs: int, i: int) -> "GrassmannElement":
        return cls._generator(n_pairs, 2 * i + 1)

    # inspection -------------------------------------------------------
    @property
    def coeffs(self) -> np.ndarray:
        full = np.zeros(self.batch_shape + (1 << (2 * self.n_pairs),))
        full[..., list(self.cols)] = self.data
        return full

    @property
    def pure(self) -> bool:
        return self.cols == (0,)

    @property
    def batch_shape(self) -> tuple:
        return self.data.shape[:-1]

    @property
    def body(self) -> np.ndarray:
        if self.cols and self.cols[0] == 0:
            return self.data[..., 0]
        return np.zeros(self.batch_shape)

    @property
    def soul(self) -> "GrassmannElement":
        if self.cols and self.cols[0] == 0:
            return GrassmannElement._make(self.n_pairs, self.cols[1:], self.data[..., 1:])
        return self

    def is_even(self) -> bool:
        return all(_grade(c) % 2 == 0 for c in self.cols)

    def is_zero(self) -> bool:
        return not self.cols or not np.any(self.data)

    def coefficient(self, bits: Sequence[int]) -> np.ndarray:
        """Coefficient of the canonically ordered monomial with these generators."""
        mask = 0
        for b in bits:
            mask |= 1 << b
        if mask in self.cols:
            return self.data[..., self.cols.index(mask)]
        return np.zeros(self.batch_shape)

    def __repr__(self) -> str:
        if self.batch_shape:
            return f"GrassmannElement(n_pairs={self.n_pairs}, batch={self.batch_shape})"
        terms = []
        for mask, c in zip(self.cols, self.data):
            if not c:
                continue
            names = [("ξ" if b % 2 == 0 else "η") + str(b // 2 + 1)
                     for b in range(2 * self.n_pairs) if mask >> b & 1]
            terms.append(f"{c:+.6g}" + ("·" + "".join(names) if names else ""))
        return " ".join(terms) if terms else "0"

    # arithmetic -------------------------------------------------------
    def _lift(self, other) -> "GrassmannElement":
        if isinstance(other, GrassmannElement):
            if other.n_pairs != self.n_pairs:
                raise GrassmannError("generator universes differ")
            return other
        return GrassmannElement.scalar(self.n_pairs, other)

    def __add__(self, other):
        o = self._lift(other)
        if self.cols == o.cols:
            return GrassmannElement._make(self.n_pairs, self.cols, self.data + o.data)
        cols, pa, pb = _sum_plan(self.cols, o.cols)
        shape = np.broadcast_shapes(self.batch_shape, o.batch_shape) + (len(cols),)
        out = np.zeros(shape)
        out[..., pa] = self.data
        out[..., pb] += o.data
        return GrassmannElement._make(self.n_pairs, cols, out)

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement._make(self.n_pairs, self.cols, -self.data)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, GrassmannElement):
            other = np.asarray(other, dtype=float)
            return GrassmannElement._make(self.n_pairs, self.cols, self.data * other[..., None])
        o = self._lift(other)
        if self.pure:
            return GrassmannElement._make(self.n_pairs, o.cols, o.data * self.data)
        if o.pure:
            return GrassmannElement._make(self.n_pairs, self.cols, self.data * o.data)
        ia, jb, cols, scatter = _product_plan(self.cols, o.cols)
        if not cols:
            shape = np.broadcast_shapes(self.batch_shape, o.batch_shape) + (0,)
            return GrassmannElement._make(self.n_pairs, (), np.zeros(shape))
        prod = self.data[..., ia] * o.data[..., jb]
        return GrassmannElement._make(self.n_pairs, cols, prod @ scatter)

    def __rmul__(self, other):
        # scalars and batch arrays commute with everything
        return self * other

    def __truediv__(self, other):
        if isinstance(other, GrassmannElement):
            return self * apply_smooth(RECIPROCAL, other)
        other = np.asarray(other, dtype=float)
        return GrassmannElement._make(self.n_pairs, self.cols, self.data / other[..., None])

    def __rtruediv__(self, other):
        return apply_smooth(RECIPROCAL, self) * other

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise GrassmannError("only nonnegative integer powers are defined")
        out = GrassmannElement.scalar(self.n_pairs, np.ones(self.batch_shape))
        for _ in range(int(k)):
            out = out * self
        return out


def supernumber(body, soul: GrassmannElement) -> GrassmannElement:
    """Even element ``body + soul``; the soul must be even and nilpotent."""
    if not soul.is_even():
        raise GrassmannError("soul of a super number must be even")
    if np.any(soul.body):
        raise GrassmannError("soul must have no degree-0 part")
    return soul + body


# smooth functions -----------------------------------------------------------

@dataclass(frozen=True)
class SmoothScalarFunction:
    """A real function with derivatives of every order up to some bound.

    ``derivatives(x, order)`` returns ``[f(x), f'(x), ..., f^(order)(x)]``.
    ``domain`` returns a boolean mask of admissible points.
    """

    derivatives: Callable[[np.ndarray, int], list]
    domain: Callable[[np.ndarray], np.ndarray] = lambda x: np.isfinite(x)
    name: str = "f"

    def __call__(self, x):
        return self.derivatives(np.asarray(x, dtype=float), 0)[0]


def _power_derivs(p: float):
    def derivs(x, order):
        out = []
        coef = 1.0
        for k in range(order + 1):
            out.append(coef * np.power(x, p - k))
            coef *= p - k
        return out
    return derivs


def power(p: float) -> SmoothScalarFunction:
    if float(p).is_integer() and p >= 0:
        dom = np.isfinite
    elif float(p).is_integer():
        dom = lambda x: np.isfinite(x) & (x != 0)
    else:
        dom = lambda x: np.isfinite(x) & (x > 0)
    return SmoothScalarFunction(_power_derivs(float(p)), dom, name=f"x^{p}")


EXP = SmoothScalarFunction(lambda x, order: [np.exp(x)] * (order + 1), name="exp")
SQRT = power(0.5)
RECIPROCAL = power(-1.0)
IDENTITY = SmoothScalarFunction(
    lambda x, order: ([x, np.ones_like(x)] + [np.zeros_like(x)] * max(order - 1, 0))[: order + 1],
    name="id",
)


def _log_derivs(x, order):
    out = [np.log(x)]
    for k in range(1, order + 1):
        out.append((-1) ** (k - 1) * math.factorial(k - 1) * np.power(x, -float(k)))
    return out


LOG = SmoothScalarFunction(_log_derivs, lambda x: np.isfinite(x) & (x > 0), name="log")


def _nilpotency_order(s: GrassmannElement) -> int:
    # an even soul has degree >= 2 in each factor
    return s.n_pairs if s.is_even() else 2 * s.n_pairs


def apply_smooth(f: SmoothScalarFunction, s: GrassmannElement) -> GrassmannElement:
    """Evaluate ``f(body + soul) = Σ_k f^(k)(body) soul^k / k!`` exactly."""
    if not isinstance(s, GrassmannElement):
        return f(s)
    body = s.body
    if not np.all(f.domain(body)):
        raise GrassmannError(f"body outside the domain of {f.name}")
    if s.pure:
        return GrassmannElement.scalar(s.n_pairs, f(body))
    order = _nilpotency_order(s)
    derivs = f.derivatives(body, order)
    soul = s.soul
    result = GrassmannElement.scalar(s.n_pairs, derivs[0])
    term = soul
    for k in range(1, order + 1):
        if term.is_zero():
            break
        result = result + term * (derivs[k] / math.factorial(k))
        term = term * soul
    return result


def apply_smooth_multi(partials: Callable[[list, tuple], np.ndarray], args: Sequence) -> GrassmannElement:
    """Multivariate Taylor expansion of a smooth function of several super numbers.

    ``partials(bodies, alpha)`` must return the mixed partial derivative of
    multi-index ``alpha`` at the (batched) body values.
    """
    elems = [a for a in args if isinstance(a, GrassmannElement)]
    if not elems:
        return partials([np.asarray(a, dtype=float) for a in args], (0,) * len(args))
    n_pairs = elems[0].n_pairs
    args = [a if isinstance(a, GrassmannElement) else GrassmannElement.scalar(n_pairs, a) for a in args]
    bodies = [a.body for a in args]
    order = max(_nilpotency_order(a) for a in args)
    souls = [a.soul for a in args]
    # powers[i][k] = soul_i^k / k!
    powers = []
    for s in souls:
        row = [GrassmannElement.scalar(n_pairs, 1.0)]
        for k in range(1, order + 1):
            nxt = row[-1] * s * (1.0 / k)
            if nxt.is_zero():
                break
            row.append(nxt)
        powers.append(row)
    result = None
    for alpha in product(*[range(len(r)) for r in powers]):
        if sum(alpha) > order:
            continue
        term = GrassmannElement.scalar(n_pairs, partials(bodies, alpha))
        for i, k in enumerate(alpha):
            if k:
                term = term * powers[i][k]
        result = term if result is None else result + term
    return result


def exp(s):
    return apply_smooth(EXP, s) if isinstance(s, GrassmannElement) else np.exp(s)


def sqrt(s):
    return apply_smooth(SQRT, s) if isinstance(s, GrassmannElement) else np.sqrt(s)


def log(s):
    return apply_smooth(LOG, s) if isinstance(s, GrassmannElement) else np.log(s)


# Berezin integration ----------------------------------------------------------

def berezin_integrate(e: GrassmannElement, pairs: Sequence[int] | None = None):
    """Integrate out the pairs ``(ξ_i, η_i)`` for ``i in pairs`` (all if None).

    Returns a Grassmann element in the remaining generators, or the real
    (batched) value when every pair is integrated.
    """
    n = e.n_pairs
    pairs = list(range(n)) if pairs is None else [int(p) for p in pairs]
    if len(set(pairs)) != len(pairs):
        raise GrassmannError("repeated pair in Berezin integration")
    if any(not 0 <= p < n for p in pairs):
        raise GrassmannError("pair index outside the universe")
    full = 0
    for p in pairs:
        full |= 0b11 << (2 * p)
    sign = (-1.0) ** len(pairs)
    # each pair block ξ_iη_i is even, so it can be moved to the front freely
    hits = [k for k, c in enumerate(e.cols) if c & full == full]
    if len(pairs) == n:
        return e.data[..., hits[0]] * sign if hits else np.zeros(e.batch_shape)
    if not hits:
        return GrassmannElement.scalar(n, np.zeros(e.batch_shape))
    cols = tuple(e.cols[k] & ~full for k in hits)
    return GrassmannElement._make(n, cols, e.data[..., hits] * sign)


def fermionic_bilinear(a: np.ndarray) -> GrassmannElement:
    """``Σ_ij A_ij ξ_i η_j`` as a Grassmann element."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    out = GrassmannElement.scalar(n, 0.0)
    for i in range(n):
        for j in range(n):
            if a[i, j]:
                out = out + GrassmannElement.xi(n, i) * GrassmannElement.eta(n, j) * float(a[i, j])
    return out


def gaussian_boson_integral(a: np.ndarray) -> float:
    """``∫ exp(-y·A y / 2) Π dy_i / sqrt(2π) = det(A)^(-1/2)`` for positive definite A."""
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T):
        raise GrassmannError("matrix must be symmetric")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise GrassmannError("matrix is not positive definite") from exc
    return float(np.prod(1.0 / np.diag(chol)))
