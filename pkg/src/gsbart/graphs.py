"""Candidate feature graphs.

Every candidate graph is an arborescence over vertex bins: each sample
(training or test) sits in exactly one vertex, and every non-root vertex
points to a unique parent.  Cutting the edge ``v -> parent(v)`` splits the
samples into the subtree hanging below ``v`` (the *right* side) and the
rest (the *left* side).

Vertices are 0-based.  An edge is identified by its child vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "VertexBin",
    "Arborescence",
    "StructuralGraph",
    "build_chain_graph",
    "default_cut_points",
    "sample_arborescence",
    "descendants",
    "ancestors",
    "bottom_vertices",
    "read_structural_graph",
    "read_bin_assignment",
]


class GraphError(ValueError):
    """Raised for malformed graphs or graph inputs."""


@dataclass(frozen=True)
class VertexBin:
    id: int
    samples: frozenset[int]


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Arborescence:
    """Rooted spanning tree with edges pointing from child to parent.

    Parameters
    ----------
    parent : (V,) int array
        ``parent[v]`` is the parent vertex of ``v``; the root holds -1.
    vertex_of : (n,) int array
        Vertex holding each sample.
    feature_label : str
        Name of the feature or structural graph the arborescence encodes.
    """

    parent: np.ndarray
    vertex_of: np.ndarray
    feature_label: str = ""
    root: int = field(init=False)
    order: np.ndarray = field(init=False, repr=False)
    tin: np.ndarray = field(init=False, repr=False)
    tout: np.ndarray = field(init=False, repr=False)
    depth: np.ndarray = field(init=False, repr=False)
    _child_ptr: np.ndarray = field(init=False, repr=False)
    _child_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        vertex_of = np.asarray(self.vertex_of, dtype=np.int64)
        if parent.ndim != 1 or parent.size == 0:
            raise GraphError("parent must be a non-empty 1-d array")
        nv = parent.size
        roots = np.flatnonzero(parent < 0)
        if roots.size != 1:
            raise GraphError(f"expected exactly one root, found {roots.size}")
        if np.any(parent >= nv) or np.any(parent == np.arange(nv)):
            raise GraphError("parent ids out of range or self-loop")
        if vertex_of.ndim != 1 or (vertex_of.size and (vertex_of.min() < 0 or vertex_of.max() >= nv)):
            raise GraphError("vertex_of holds vertex ids out of range")
        root = int(roots[0])

        # children in CSR layout, ordered by vertex id
        nonroot = np.flatnonzero(parent >= 0)
        by_parent = nonroot[np.argsort(parent[nonroot], kind="stable")]
        counts = np.bincount(parent[nonroot], minlength=nv)
        ptr = np.concatenate([[0], np.cumsum(counts)])

        # iterative preorder; subtree(v) == order[tin[v]:tout[v]]
        order = np.empty(nv, dtype=np.int64)
        depth = np.zeros(nv, dtype=np.int64)
        stack = [root]
        pos = 0
        while stack:
            v = stack.pop()
            if pos >= nv:
                raise GraphError("cycle detected")
            order[pos] = v
            pos += 1
            kids = by_parent[ptr[v]:ptr[v + 1]]
            depth[kids] = depth[v] + 1
            stack.extend(kids[::-1].tolist())
        if pos != nv:
            raise GraphError("graph is not connected to the root (cycle or detached part)")
        tin = np.empty(nv, dtype=np.int64)
        tin[order] = np.arange(nv)
        size = np.ones(nv, dtype=np.int64)
        for v in order[::-1]:
            p = parent[v]
            if p >= 0:
                size[p] += size[v]
        tout = tin + size

        set_ = object.__setattr__
        set_(self, "parent", _readonly(parent))
        set_(self, "vertex_of", _readonly(vertex_of))
        set_(self, "root", root)
        set_(self, "order", _readonly(order))
        set_(self, "tin", _readonly(tin))
        set_(self, "tout", _readonly(tout))
        set_(self, "depth", _readonly(depth))
        set_(self, "_child_ptr", _readonly(ptr))
        set_(self, "_child_idx", _readonly(by_parent))

    @property
    def n_vertices(self) -> int:
        return self.parent.size

    @property
    def n_samples(self) -> int:
        return self.vertex_of.size

    def children(self, v: int) -> np.ndarray:
        self._check(v)
        return self._child_idx[self._child_ptr[v]:self._child_ptr[v + 1]]

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges as (child, parent) pairs, ordered by child id."""
        return [(v, int(p)) for v, p in enumerate(self.parent) if p >= 0]

    @property
    def bins(self) -> list[VertexBin]:
        groups = [[] for _ in range(self.n_vertices)]
        for i, v in enumerate(self.vertex_of.tolist()):
            groups[v].append(i)
        return [VertexBin(v, frozenset(s)) for v, s in enumerate(groups)]

    def subtree(self, v: int) -> np.ndarray:
        """``v`` together with all its descendants."""
        self._check(v)
        return self.order[self.tin[v]:self.tout[v]]

    def in_subtree(self, v: int, vertices) -> np.ndarray:
        """Boolean mask: which of ``vertices`` lie in the subtree of ``v``."""
        t = self.tin[np.asarray(vertices)]
        return (t >= self.tin[v]) & (t < self.tout[v])

    def bipartition(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Sample indices (left, right) obtained by cutting the edge of ``v``."""
        if v == self.root:
            raise GraphError("the root vertex has no edge")
        right = self.in_subtree(v, self.vertex_of)
        return np.flatnonzero(~right), np.flatnonzero(right)

    def _check(self, v):
        if not 0 <= v < self.n_vertices:
            raise GraphError(f"vertex {v} out of range [0, {self.n_vertices})")

    def with_samples(self, vertex_of) -> "Arborescence":
        """Same graph with a different sample-to-vertex assignment."""
        return Arborescence(self.parent, vertex_of, self.feature_label)


def descendants(a: Arborescence, v: int) -> set[int]:
    return set(a.subtree(v)[1:].tolist())


def ancestors(a: Arborescence, v: int) -> set[int]:
    a._check(v)
    out = set()
    p = a.parent[v]
    while p >= 0:
        out.add(int(p))
        p = a.parent[p]
    return out


def bottom_vertices(a: Arborescence) -> set[int]:
    has_child = np.zeros(a.n_vertices, dtype=bool)
    has_child[a.parent[a.parent >= 0]] = True
    return set(np.flatnonzero(~has_child).tolist())


# ---------------------------------------------------------------- chains

def default_cut_points(values, bin_count: int = 100) -> np.ndarray:
    """Quantile cut points of the distinct values.

    The ``k / bin_count`` quantiles (linear interpolation) of the distinct
    values for ``k = 1 .. bin_count - 1``, deduplicated.
    """
    if bin_count < 2:
        raise GraphError("bin_count must be at least 2")
    distinct = np.unique(np.asarray(values, dtype=float))
    if distinct.size < 2:
        raise GraphError("need at least 2 distinct values to place a cut")
    qs = np.arange(1, bin_count) / bin_count
    cuts = np.unique(np.quantile(distinct, qs))
    # a cut at the maximum would leave the top bin empty for every sample
    return cuts[cuts < distinct[-1]]


def build_chain_graph(values, cut_points, feature_label: str = "") -> Arborescence:
    """Chain arborescence binning a numeric feature.

    Vertex ``k`` holds the samples with ``c[k-1] < x <= c[k]``; the root is
    the lowest bin and each vertex points to the bin below it, so cutting the
    edge of vertex ``k`` separates ``x <= c[k-1]`` from ``x > c[k-1]``.
    """
    x = np.asarray(values, dtype=float)
    cuts = np.asarray(cut_points, dtype=float)
    if cuts.ndim != 1 or cuts.size == 0:
        raise GraphError("need at least one cut point")
    if not np.all(np.isfinite(cuts)) or np.any(np.diff(cuts) <= 0):
        raise GraphError("cut points must be finite and strictly increasing")
    if not np.all(np.isfinite(x)):
        raise GraphError("feature values must be finite")
    vertex_of = np.searchsorted(cuts, x, side="left")
    nv = cuts.size + 1
    parent = np.arange(-1, nv - 1)
    return Arborescence(parent, vertex_of, feature_label)


# ---------------------------------------------------------- structural graphs

@dataclass(frozen=True, eq=False)
class StructuralGraph:
    """Undirected connected graph over vertex bins."""

    vertex_count: int
    edges: np.ndarray
    bin_assignment: np.ndarray
    label: str = ""

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        nv = int(self.vertex_count)
        if nv < 1:
            raise GraphError("vertex_count must be positive")
        if e.size and (e.min() < 0 or e.max() >= nv):
            raise GraphError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loops are not allowed")
        e = np.unique(np.sort(e, axis=1), axis=0)
        bins = np.asarray(self.bin_assignment, dtype=np.int64)
        if bins.size and (bins.min() < 0 or bins.max() >= nv):
            raise GraphError("bin assignment refers to a missing vertex")
        object.__setattr__(self, "edges", _readonly(e))
        object.__setattr__(self, "bin_assignment", _readonly(bins))
        object.__setattr__(self, "vertex_count", nv)
        if not self._connected():
            raise GraphError("structural graph is not connected")

    def neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency (ptr, idx)."""
        nv = self.vertex_count
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        both = both[np.lexsort((both[:, 1], both[:, 0]))]
        counts = np.bincount(both[:, 0], minlength=nv)
        return np.concatenate([[0], np.cumsum(counts)]), both[:, 1].copy()

    def _connected(self) -> bool:
        ptr, idx = self.neighbors()
        seen = np.zeros(self.vertex_count, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            v = stack.pop()
            for u in idx[ptr[v]:ptr[v + 1]]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(int(u))
        return bool(seen.all())


def sample_arborescence(g: StructuralGraph, seed=None, feature_label: str | None = None) -> Arborescence:
    """Uniform random spanning tree of ``g`` oriented toward a uniform root.

    Wilson's loop-erased random walk algorithm: exact uniform sampling of
    spanning trees.  ``seed`` may be an int or a numpy Generator.
    """
    rng = np.random.default_rng(seed)
    ptr, idx = g.neighbors()
    deg = np.diff(ptr)
    nv = g.vertex_count
    root = int(rng.integers(nv))
    in_tree = np.zeros(nv, dtype=bool)
    in_tree[root] = True
    nxt = np.full(nv, -1, dtype=np.int64)
    for start in range(nv):
        u = start
        while not in_tree[u]:
            nxt[u] = idx[ptr[u] + rng.integers(deg[u])]
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    parent = nxt
    parent[root] = -1
    label = g.label if feature_label is None else feature_label
    return Arborescence(parent, g.bin_assignment, label)


def _read_int_rows(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([int(tok) for tok in line.replace(",", " ").split()])
    return rows


def read_bin_assignment(path) -> np.ndarray:
    """Vertex of every sample row from "row vertex" pairs or one id per line."""
    rows = _read_int_rows(path)
    if all(len(r) == 1 for r in rows):
        return np.array([r[0] for r in rows], dtype=np.int64)
    if all(len(r) == 2 for r in rows):
        pairs = sorted(rows)
        if [r[0] for r in pairs] != list(range(len(pairs))):
            raise GraphError(f"{path}: rows must cover 0..n-1 exactly once")
        return np.array([r[1] for r in pairs], dtype=np.int64)
    raise GraphError(f"{path}: mixed row formats")


def read_structural_graph(edge_path, bin_path=None, label: str = "", bins: Sequence[int] | None = None) -> StructuralGraph:
    """Load an edge list ("u v" per line, 0-based) and a bin assignment.

    The bin file holds either "row vertex" pairs or one vertex id per line
    (line number = sample row).  Alternatively pass ``bins`` directly.
    """
    edges = _read_int_rows(edge_path)
    if any(len(r) != 2 for r in edges):
        raise GraphError(f"{edge_path}: every line must hold exactly two vertex ids")
    if bins is None:
        if bin_path is None:
            raise GraphError("a bin assignment is required")
        bins = read_bin_assignment(bin_path)
    bins = np.asarray(bins, dtype=np.int64)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    nv = int(max(e.max(initial=-1), bins.max(initial=-1))) + 1
    return StructuralGraph(nv, e, bins, label)
