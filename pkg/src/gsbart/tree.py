"""Graph-split decision trees.

Nodes live in an append-only arena.  A split appends two children; a merge
marks them dead but keeps their records, so earlier tree states can be
restored from a set of leaf ids (see :meth:`DecisionTree.restore`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graphs import Arborescence

__all__ = [
    "GraphSplitRule",
    "TreeNode",
    "DecisionTree",
    "TreeError",
    "resolve_equivalent_edge",
    "equivalent_edge_set",
]

LEAF, INTERNAL, DEAD = "leaf", "internal", "dead"


class TreeError(ValueError):
    """Invalid tree move."""


@dataclass(frozen=True)
class GraphSplitRule:
    graph_id: int
    edge_id: int


@dataclass(eq=False)
class TreeNode:
    id: int
    depth: int
    samples: np.ndarray
    train: np.ndarray
    parent: int = -1
    side: int = 0  # 0 = left child, 1 = right child of ``parent``
    split_rule: GraphSplitRule | None = None  # rule of the split that created this node
    kind: str = LEAF
    rule: GraphSplitRule | None = None
    children: tuple[int, int] | None = None
    leaf_weight: float = 0.0

    @property
    def is_leaf(self):
        return self.kind == LEAF


class DecisionTree:
    """Binary tree of graph-split rules over a fixed sample set.

    Parameters
    ----------
    train_mask : (n,) bool array
        Which samples are training samples; only these decide validity.
    max_depth : int
        Leaves at this depth are never split.
    """

    def __init__(self, train_mask, max_depth: int = 10):
        self.train_mask = np.asarray(train_mask, dtype=bool)
        self.max_depth = int(max_depth)
        n = self.train_mask.size
        root = TreeNode(0, 0, np.arange(n), np.flatnonzero(self.train_mask))
        self.nodes: list[TreeNode] = [root]
        self.leaf_of = np.zeros(n, dtype=np.int64)

    # ------------------------------------------------------------ queries
    @property
    def n_samples(self):
        return self.train_mask.size

    def node(self, i) -> TreeNode:
        return self.nodes[i]

    def leaves(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.kind == LEAF]

    def internals(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.kind == INTERNAL]

    def n_leaves(self) -> int:
        return sum(nd.kind == LEAF for nd in self.nodes)

    def second_generation_internals(self) -> list[int]:
        nodes = self.nodes
        return [nd.id for nd in nodes if nd.kind == INTERNAL
                and nodes[nd.children[0]].kind == LEAF and nodes[nd.children[1]].kind == LEAF]

    def is_root_only(self) -> bool:
        return self.nodes[0].kind == LEAF

    # -------------------------------------------------------------- moves
    def split_by_mask(self, leaf_id: int, rule: GraphSplitRule, right_mask) -> tuple[int, int]:
        """Split a leaf given the right-side mask over its samples."""
        nd = self.nodes[leaf_id]
        if nd.kind != LEAF:
            raise TreeError(f"node {leaf_id} is not a leaf")
        if nd.depth >= self.max_depth:
            raise TreeError(f"node {leaf_id} is at the depth cap {self.max_depth}")
        right_mask = np.asarray(right_mask, dtype=bool)
        s_l, s_r = nd.samples[~right_mask], nd.samples[right_mask]
        tm = self.train_mask
        t_l, t_r = s_l[tm[s_l]], s_r[tm[s_r]]
        if t_l.size == 0 or t_r.size == 0:
            raise TreeError("split leaves an offspring without training samples")
        return self._attach(nd, rule, s_l, t_l, s_r, t_r)

    def _attach(self, nd, rule, s_l, t_l, s_r, t_r):
        base = len(self.nodes)
        left = TreeNode(base, nd.depth + 1, s_l, t_l, nd.id, 0, rule)
        right = TreeNode(base + 1, nd.depth + 1, s_r, t_r, nd.id, 1, rule)
        self.nodes += [left, right]
        nd.kind, nd.rule, nd.children = INTERNAL, rule, (base, base + 1)
        self.leaf_of[s_l] = base
        self.leaf_of[s_r] = base + 1
        return base, base + 1

    def apply_split(self, leaf_id: int, rule: GraphSplitRule, graphs: Sequence[Arborescence]):
        """Split ``leaf_id`` by cutting edge ``rule.edge_id`` of graph ``rule.graph_id``."""
        g = graphs[rule.graph_id]
        if rule.edge_id == g.root or not 0 <= rule.edge_id < g.n_vertices:
            raise TreeError(f"edge {rule.edge_id} does not exist in graph {rule.graph_id}")
        nd = self.nodes[leaf_id]
        mask = g.in_subtree(rule.edge_id, g.vertex_of[nd.samples])
        self.split_by_mask(leaf_id, rule, mask)
        return self

    def apply_merge(self, internal_id: int):
        nd = self.nodes[internal_id]
        if nd.kind != INTERNAL:
            raise TreeError(f"node {internal_id} is not internal")
        left, right = (self.nodes[c] for c in nd.children)
        if left.kind != LEAF or right.kind != LEAF:
            raise TreeError(f"node {internal_id} has a non-leaf child")
        left.kind = right.kind = DEAD
        nd.kind, nd.rule, nd.children = LEAF, None, None
        self.leaf_of[nd.samples] = nd.id
        return self

    # --------------------------------------------------- state management
    def restore(self, leaf_ids):
        """Reset the tree to the state whose leaves are ``leaf_ids``.

        Valid for any leaf set the tree passed through: node records are
        never overwritten, only their kind and children links.
        """
        nodes = self.nodes
        for nd in nodes:
            nd.kind, nd.rule, nd.children = DEAD, None, None
        live = set()
        for i in leaf_ids:
            nodes[i].kind = LEAF
            self.leaf_of[nodes[i].samples] = i
            j = i
            while j >= 0 and j not in live:
                live.add(j)
                j = nodes[j].parent
        kids: dict[int, list] = {}
        for j in live:
            p = nodes[j].parent
            if p >= 0:
                kids.setdefault(p, [None, None])[nodes[j].side] = j
        for p, (l, r) in kids.items():
            nd = nodes[p]
            if l is None or r is None:
                raise TreeError("leaf set does not describe a tree state")
            nd.kind, nd.children, nd.rule = INTERNAL, (l, r), nodes[l].split_rule
        return self

    def compact(self) -> "DecisionTree":
        """Copy with dead nodes dropped and ids renumbered breadth-first."""
        out = DecisionTree.__new__(DecisionTree)
        out.train_mask = self.train_mask
        out.max_depth = self.max_depth
        out.leaf_of = np.empty_like(self.leaf_of)
        out.nodes = []
        queue = [(0, -1, 0, None)]
        while queue:
            old, parent, side, srule = queue.pop(0)
            src = self.nodes[old]
            new = TreeNode(len(out.nodes), src.depth, src.samples, src.train, parent, side, srule,
                           src.kind, src.rule, None, src.leaf_weight)
            out.nodes.append(new)
            if parent >= 0:
                kids = list(out.nodes[parent].children or (None, None))
                kids[side] = new.id
                out.nodes[parent].children = tuple(kids)
            if src.kind == INTERNAL:
                new.children = (None, None)
                queue.append((src.children[0], new.id, 0, src.rule))
                queue.append((src.children[1], new.id, 1, src.rule))
            else:
                out.leaf_of[src.samples] = new.id
        return out

    def recompute_membership(self, graphs: Sequence[Arborescence]) -> np.ndarray:
        """Leaf of every sample, re-derived by replaying rules from the root."""
        return self.route([g.vertex_of for g in graphs], graphs)

    def route(self, vertex_of: Sequence[np.ndarray], graphs: Sequence[Arborescence]) -> np.ndarray:
        """Leaf id for samples whose vertex in graph ``g`` is ``vertex_of[g]``."""
        n = len(vertex_of[0]) if len(vertex_of) else self.n_samples
        out = np.zeros(n, dtype=np.int64)
        stack = [(0, np.arange(n))]
        while stack:
            i, idx = stack.pop()
            nd = self.nodes[i]
            if nd.kind != INTERNAL:
                out[idx] = i
                continue
            g = graphs[nd.rule.graph_id]
            right = g.in_subtree(nd.rule.edge_id, np.asarray(vertex_of[nd.rule.graph_id])[idx])
            stack.append((nd.children[0], idx[~right]))
            stack.append((nd.children[1], idx[right]))
        return out

    def leaf_values(self, leaf_ids) -> np.ndarray:
        w = np.array([nd.leaf_weight for nd in self.nodes])
        return w[np.asarray(leaf_ids)]

    def vertex_groups(self, graph: Arborescence) -> dict[tuple[int, int], tuple[frozenset, frozenset]]:
        """For every non-empty (vertex, leaf) pair, the (training, test) samples in both."""
        groups: dict[tuple[int, int], tuple[list, list]] = {}
        for i, (v, k) in enumerate(zip(graph.vertex_of.tolist(), self.leaf_of.tolist())):
            tr, te = groups.setdefault((v, k), ([], []))
            (tr if self.train_mask[i] else te).append(i)
        return {key: (frozenset(tr), frozenset(te)) for key, (tr, te) in groups.items()}

    def structure(self):
        """Hashable description: nested (graph_id, edge_id, left, right) tuples, leaves as None."""
        def rec(i):
            nd = self.nodes[i]
            if nd.kind != INTERNAL:
                return None
            return (nd.rule.graph_id, nd.rule.edge_id, rec(nd.children[0]), rec(nd.children[1]))
        return rec(0)

    def partition_key(self):
        """Hashable description by training sample sets instead of edge ids."""
        def rec(i):
            nd = self.nodes[i]
            if nd.kind != INTERNAL:
                return None
            l, r = nd.children
            return (nd.rule.graph_id, tuple(self.nodes[l].train.tolist()), rec(l), rec(r))
        return rec(0)

    # ------------------------------------------------------ serialization
    def to_lines(self) -> list[str]:
        """One line per live node; the tree must be compact."""
        lines = []
        for nd in self.nodes:
            if nd.kind == INTERNAL:
                lines.append(f"{nd.id} internal {nd.depth} {nd.rule.graph_id} {nd.rule.edge_id} "
                             f"{nd.children[0]} {nd.children[1]}")
            elif nd.kind == LEAF:
                lines.append(f"{nd.id} leaf {nd.depth} {nd.leaf_weight!r}")
        return lines


@dataclass
class CompactTree:
    """Stored tree: rules and leaf weights only, no sample bookkeeping."""

    kind: np.ndarray  # 1 internal, 0 leaf
    graph_id: np.ndarray
    edge_id: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    depth: np.ndarray = field(default=None)

    @classmethod
    def from_tree(cls, tree: DecisionTree) -> "CompactTree":
        t = tree if all(nd.kind != DEAD for nd in tree.nodes) else tree.compact()
        return cls.from_lines(t.to_lines())

    @classmethod
    def from_lines(cls, lines) -> "CompactTree":
        m = len(lines)
        kind = np.zeros(m, np.int8)
        gid, eid, left, right = (np.full(m, -1, np.int64) for _ in range(4))
        weight = np.zeros(m)
        depth = np.zeros(m, np.int64)
        for line in lines:
            tok = line.split()
            i = int(tok[0])
            depth[i] = int(tok[2])
            if tok[1] == "internal":
                kind[i] = 1
                gid[i], eid[i], left[i], right[i] = map(int, tok[3:7])
            elif tok[1] == "leaf":
                weight[i] = float(tok[3])
            else:
                raise TreeError(f"bad node line: {line!r}")
        return cls(kind, gid, eid, left, right, weight, depth)

    def to_lines(self) -> list[str]:
        out = []
        for i in range(self.kind.size):
            if self.kind[i]:
                out.append(f"{i} internal {self.depth[i]} {self.graph_id[i]} {self.edge_id[i]} "
                           f"{self.left[i]} {self.right[i]}")
            else:
                out.append(f"{i} leaf {self.depth[i]} {float(self.weight[i])!r}")
        return out

    def route(self, vertex_of: Sequence[np.ndarray], graphs: Sequence[Arborescence]) -> np.ndarray:
        n = len(vertex_of[0])
        out = np.zeros(n, dtype=np.int64)
        stack = [(0, np.arange(n))]
        while stack:
            i, idx = stack.pop()
            if not self.kind[i]:
                out[idx] = i
                continue
            g = graphs[self.graph_id[i]]
            right = g.in_subtree(self.edge_id[i], np.asarray(vertex_of[self.graph_id[i]])[idx])
            stack.append((self.left[i], idx[~right]))
            stack.append((self.right[i], idx[right]))
        return out

    def predict(self, vertex_of, graphs) -> np.ndarray:
        return self.weight[self.route(vertex_of, graphs)]

    def split_graphs(self) -> np.ndarray:
        return self.graph_id[self.kind == 1]

    def __eq__(self, other):
        return isinstance(other, CompactTree) and self.to_lines() == other.to_lines()


def equivalent_edge_set(graph: Arborescence, edge_types, chosen_edge: int) -> list[int]:
    """Edges inducing the same training bipartition as a valid ``chosen_edge``.

    Walks up from ``chosen_edge`` through ancestors typed redundant (0).
    """
    types = np.asarray(edge_types)
    if types[chosen_edge] != 1:
        raise TreeError(f"edge {chosen_edge} is not valid for this leaf")
    out = [int(chosen_edge)]
    v = graph.parent[chosen_edge]
    while v >= 0 and types[v] == 0:
        out.append(int(v))
        v = graph.parent[v]
    return out


def resolve_equivalent_edge(graph: Arborescence, edge_types, chosen_edge: int, seed=None) -> int:
    """Uniform draw from the equivalent edge set of ``chosen_edge``."""
    members = equivalent_edge_set(graph, edge_types, chosen_edge)
    if len(members) == 1:
        return members[0]
    rng = np.random.default_rng(seed)
    return members[int(rng.integers(len(members)))]
