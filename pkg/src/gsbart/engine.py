"""Per-graph split tables: split log-ratios and edge types for every leaf.

For one arborescence and the current tree, a single bottom-up pass
accumulates the gradient statistics of every subtree.  The subtree below
vertex ``v`` is the right side of the cut at ``v``; the left side follows by
subtraction from the leaf totals.  Each (edge, leaf) cell is then typed

* ``1``  valid: both sides hold training samples and no lower edge gives
  the same training bipartition,
* ``0``  redundant: the bipartition equals the one of its only
  non-empty child (``v`` itself holds no training samples of the leaf),
* ``-1`` invalid: one side is empty, or ``v`` is the root (no edge).

Ratios are finite exactly on valid cells.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import Arborescence
from .likelihood import GradientTable, LeafStats, PriorConfig, leaf_stats, split_log_ratio_arrays
from .tree import DecisionTree

__all__ = [
    "VALID",
    "REDUNDANT",
    "INVALID",
    "VertexStats",
    "SplitTable",
    "ScanError",
    "compute_vertex_stats",
    "vertex_stats_from_labels",
    "recursive_split_scan",
    "scan_all_graphs",
    "tree_leaf_totals",
]

VALID, REDUNDANT, INVALID = 1, 0, -1


class ScanError(RuntimeError):
    """A per-graph scan failed; the message names the graph."""


@dataclass
class VertexStats:
    """Per-vertex, per-leaf gradient sums over training samples.

    Column ``k`` refers to ``leaves[k]``.
    """

    J: np.ndarray
    H: np.ndarray
    count: np.ndarray
    leaves: list

    def totals(self) -> list[LeafStats]:
        js, hs, cs = self.J.sum(axis=0), self.H.sum(axis=0), self.count.sum(axis=0)
        return [LeafStats(float(j), float(h), int(c)) for j, h, c in zip(js, hs, cs)]


@dataclass
class SplitTable:
    """Split log-ratios and edge types, one row per vertex and one column per leaf.

    ``right_*`` hold the subtree (right side) statistics of each cut.
    """

    ratio: np.ndarray
    edge_type: np.ndarray
    right_J: np.ndarray
    right_H: np.ndarray
    right_count: np.ndarray
    leaves: list

    def valid_cells(self):
        return np.argwhere(self.edge_type == VALID)


def vertex_stats_from_labels(graph: Arborescence, labels, train_mask, table: GradientTable,
                             leaves: Sequence[int]) -> VertexStats:
    """Vertex statistics for an arbitrary labelling of samples into leaves."""
    labels = np.asarray(labels)
    col = {leaf: k for k, leaf in enumerate(leaves)}
    train = np.flatnonzero(np.asarray(train_mask, dtype=bool))
    cols = np.array([col[label] for label in labels[train].tolist()], dtype=np.int64)
    rows = graph.vertex_of[train]
    shape = (graph.n_vertices, len(leaves))
    J, H = np.zeros(shape), np.zeros(shape)
    count = np.zeros(shape, dtype=np.int64)
    np.add.at(J, (rows, cols), table.j[train])
    np.add.at(H, (rows, cols), table.h[train])
    np.add.at(count, (rows, cols), 1)
    return VertexStats(J, H, count, list(leaves))


def compute_vertex_stats(graph: Arborescence, tree: DecisionTree, table: GradientTable) -> VertexStats:
    return vertex_stats_from_labels(graph, tree.leaf_of, tree.train_mask, table, tree.leaves())


def tree_leaf_totals(tree: DecisionTree, table: GradientTable) -> list[LeafStats]:
    return [leaf_stats(tree.node(k).train, table) for k in tree.leaves()]


def recursive_split_scan(graph: Arborescence, vs: VertexStats, leaf_totals: Sequence[LeafStats],
                         prior: PriorConfig) -> SplitTable:
    """Split table of one graph from its vertex statistics."""
    tot_J = np.array([s.J for s in leaf_totals], dtype=float)
    tot_H = np.array([s.H for s in leaf_totals], dtype=float)
    tot_c = np.array([s.count for s in leaf_totals], dtype=np.int64)
    if tot_c.shape != (vs.count.shape[1],) or np.any(vs.count.sum(axis=0) != tot_c):
        raise ValueError("vertex statistics disagree with the leaf totals")

    RJ, RH, RC = vs.J.copy(), vs.H.copy(), vs.count.copy()
    nonempty_children = np.zeros(vs.count.shape, dtype=np.int64)
    parent = graph.parent
    # reverse preorder visits every child before its parent: each edge once
    for v in graph.order[::-1]:
        p = parent[v]
        if p >= 0:
            RJ[p] += RJ[v]
            RH[p] += RH[v]
            RC[p] += RC[v]
            nonempty_children[p] += RC[v] > 0

    invalid = (RC == 0) | (RC == tot_c)
    invalid[graph.root] = True
    redundant = ~invalid & (nonempty_children == 1) & (vs.count == 0)
    edge_type = np.full(RC.shape, VALID, dtype=np.int8)
    edge_type[invalid] = INVALID
    edge_type[redundant] = REDUNDANT

    ratio = np.full(RC.shape, -np.inf)
    rows, cols = np.nonzero(edge_type == VALID)
    if rows.size:
        jr, hr = RJ[rows, cols], RH[rows, cols]
        jp, hp = tot_J[cols], tot_H[cols]
        ratio[rows, cols] = split_log_ratio_arrays(jp, hp, jp - jr, hp - hr, jr, hr,
                                                   prior.mu0, prior.sigma_mu2)
    return SplitTable(ratio, edge_type, RJ, RH, RC, list(vs.leaves))


def scan_all_graphs(graphs: Sequence[Arborescence], tree: DecisionTree, table: GradientTable,
                    prior: PriorConfig, workers: int | None = None) -> list[SplitTable]:
    """Split tables of every candidate graph, in graph order.

    Scans are independent; with ``workers > 1`` they run on a thread pool.
    The output does not depend on the worker count.
    """
    totals = tree_leaf_totals(tree, table)

    def one(i):
        try:
            vs = compute_vertex_stats(graphs[i], tree, table)
            return recursive_split_scan(graphs[i], vs, totals, prior)
        except Exception as exc:  # re-raised with the graph id attached
            raise ScanError(f"graph {i}: {exc}") from exc

    if workers is None or workers <= 1 or len(graphs) <= 1:
        return [one(i) for i in range(len(graphs))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(graphs))))
