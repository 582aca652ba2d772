"""Finite weighted graphs, cemetery augmentation and spanning-tree sums."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


def _is_connected(weights: np.ndarray) -> bool:
    n = weights.shape[0]
    if n <= 1:
        return True
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(weights[i] > 0):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


@dataclass(frozen=True)
class WeightedGraph:
    """Symmetric nonnegative conductances on vertices ``0..n-1``."""

    weights: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError("weight table must be square")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise GraphError("weights must be finite and nonnegative")
        if not np.allclose(w, w.T, rtol=0, atol=0):
            raise GraphError("weight table must be symmetric")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed")
        if not _is_connected(w):
            raise GraphError("graph is disconnected")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n: int, edges, name: str = "") -> "WeightedGraph":
        w = np.zeros((n, n))
        for i, j, wij in edges:
            if i == j:
                raise GraphError(f"self-loop at {i}")
            w[i, j] = w[j, i] = float(wij)
        return cls(w, name=name)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        iu, ju = np.triu_indices(self.n, 1)
        mask = self.weights[iu, ju] > 0
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(iu[mask], ju[mask])]

    def laplacian(self) -> np.ndarray:
        return laplacian(self)


@dataclass(frozen=True)
class AugmentedGraph:
    """A graph on V together with a cemetery vertex δ (stored at index n).

    ``cemetery`` holds the pinning weights W_{δ,i}; when they are all equal
    the common value is available as :attr:`h`.
    """

    base: WeightedGraph
    cemetery: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        c = np.broadcast_to(np.asarray(self.cemetery, dtype=float), (self.base.n,)).copy()
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise GraphError("cemetery weights must be finite and nonnegative")
        if not np.any(c > 0):
            raise GraphError("at least one cemetery weight must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "cemetery", c)

    @classmethod
    def with_mass(cls, base: WeightedGraph, h: float, name: str = "") -> "AugmentedGraph":
        return cls(base, np.full(base.n, float(h)), name=name or base.name)

    @property
    def n(self) -> int:
        """Number of non-cemetery vertices."""
        return self.base.n

    @property
    def delta(self) -> int:
        return self.base.n

    @property
    def h(self) -> float | None:
        c = self.cemetery
        return float(c[0]) if np.all(c == c[0]) else None

    @property
    def tilde(self) -> WeightedGraph:
        """The enlarged graph on V ∪ {δ} as a plain weighted graph."""
        n = self.n
        w = np.zeros((n + 1, n + 1))
        w[:n, :n] = self.base.weights
        w[:n, n] = w[n, :n] = self.cemetery
        return WeightedGraph(w, name=self.name)


def full_weights(g: WeightedGraph | AugmentedGraph) -> np.ndarray:
    """Weight table over every vertex of ``g`` (δ last for augmented graphs)."""
    return g.tilde.weights if isinstance(g, AugmentedGraph) else g.weights


def laplacian(g: WeightedGraph) -> np.ndarray:
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def augmented_laplacian(g: AugmentedGraph) -> np.ndarray:
    return laplacian(g.tilde)


def _weighted_laplacian(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    # w: (n, n); u: (..., n) -> (..., n, n) Laplacian of W_ij e^{u_i+u_j}
    eu = np.exp(u)
    c = w * eu[..., :, None] * eu[..., None, :]
    lap = -c
    idx = np.arange(w.shape[0])
    lap[..., idx, idx] = c.sum(axis=-1)
    return lap


def tree_determinant(g: WeightedGraph | AugmentedGraph, u=None, drop: int = 0) -> np.ndarray | float:
    """Weighted spanning-tree sum D(W, u) by the matrix-tree theorem.

    Edge {i,j} carries weight ``W_ij exp(u_i + u_j)``. ``u`` may carry leading
    batch axes. Any row/column may be deleted (``drop``); the value does not
    depend on the choice.
    """
    w = full_weights(g)
    n = w.shape[0]
    u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
    if u.shape[-1] != n:
        raise GraphError(f"environment has {u.shape[-1]} entries, graph has {n} vertices")
    if n == 1:
        return np.ones(u.shape[:-1]) if u.ndim > 1 else 1.0
    lap = _weighted_laplacian(w, u)
    keep = [i for i in range(n) if i != drop]
    minor = lap[..., keep, :][..., :, keep]
    d = np.linalg.det(minor)
    if np.any(~(d > 0)):
        raise GraphError("spanning-tree determinant is not positive (disconnected graph?)")
    return d if np.ndim(d) else float(d)


def spanning_tree_bruteforce(g: WeightedGraph | AugmentedGraph, u=None, max_vertices: int = 8) -> float:
    """Exact spanning-tree sum by enumerating all (n-1)-edge subsets."""
    w = full_weights(g)
    n = w.shape[0]
    if n > max_vertices:
        raise GraphError(f"brute-force enumeration limited to {max_vertices} vertices")
    u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
    if n == 1:
        return 1.0
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if w[i, j] > 0]
    total = 0.0
    for subset in itertools.combinations(edges, n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        acyclic = True
        for i, j in subset:
            ri, rj = find(i), find(j)
            if ri == rj:
                acyclic = False
                break
            parent[ri] = rj
        if acyclic:
            total += float(np.prod([w[i, j] * np.exp(u[i] + u[j]) for i, j in subset]))
    if total <= 0:
        raise GraphError("graph has no spanning tree")
    return total


def graph_from_json(doc) -> WeightedGraph | AugmentedGraph:
    """Build a graph from ``{"vertices": n, "edges": [[i, j, w], ...]}``.

    An optional ``"h"`` (scalar) or ``"cemetery_weights"`` (list) turns the
    result into an :class:`AugmentedGraph`. ``doc`` may be a dict, a JSON
    string or a path to a JSON file.
    """
    if isinstance(doc, (str, Path)):
        p = Path(doc)
        if isinstance(doc, Path) or (len(str(doc)) < 4096 and p.suffix == ".json" and p.exists()):
            doc = json.loads(p.read_text())
        else:
            doc = json.loads(doc)
    try:
        n = int(doc["vertices"])
        edges = doc.get("edges", [])
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    base = WeightedGraph.from_edges(n, edges, name=doc.get("name", ""))
    if "h" in doc and "cemetery_weights" in doc:
        raise GraphError("give either 'h' or 'cemetery_weights', not both")
    if "h" in doc:
        return AugmentedGraph.with_mass(base, float(doc["h"]), name=base.name)
    if "cemetery_weights" in doc:
        return AugmentedGraph(base, np.asarray(doc["cemetery_weights"], dtype=float), name=base.name)
    return base


# small named graphs used throughout the test corpus
def single_vertex(h: float | None = None) -> WeightedGraph | AugmentedGraph:
    g = WeightedGraph(np.zeros((1, 1)), name="single")
    return g if h is None else AugmentedGraph.with_mass(g, h, name="single")


def pair(w: float = 1.0, h: float | None = None) -> WeightedGraph | AugmentedGraph:
    g = WeightedGraph.from_edges(2, [(0, 1, w)], name="pair")
    return g if h is None else AugmentedGraph.with_mass(g, h, name="pair")


def path3(w: float = 1.0, h: float | None = None) -> WeightedGraph | AugmentedGraph:
    g = WeightedGraph.from_edges(3, [(0, 1, w), (1, 2, w)], name="path3")
    return g if h is None else AugmentedGraph.with_mass(g, h, name="path3")


def triangle(w: float = 1.0, h: float | None = None) -> WeightedGraph | AugmentedGraph:
    g = WeightedGraph.from_edges(3, [(0, 1, w), (1, 2, w), (0, 2, w)], name="triangle")
    return g if h is None else AugmentedGraph.with_mass(g, h, name="triangle")
