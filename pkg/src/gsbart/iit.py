"""Rejection-free informed proposals for growing one tree.

Within one tree update the gradient table is fixed, so a leaf's split
options depend only on its training samples.  :class:`ForestScanner`
computes them once per distinct sample set and caches the result; the
neighbourhood of a tree is then assembled from those per-leaf scans.

Every candidate graph is placed in one shared vertex index space (the
*forest*); a split option is identified by its forest vertex ``gv``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .engine import INVALID, REDUNDANT, VALID, recursive_split_scan, vertex_stats_from_labels
from .graphs import Arborescence
from .likelihood import (
    GradientTable,
    LeafStats,
    PriorConfig,
    ResponseModel,
    leaf_posterior,
    log_m_hat,
    merge_log_ratio,
    split_log_ratio_arrays,
)
from .tree import DecisionTree, GraphSplitRule, resolve_equivalent_edge

__all__ = [
    "Forest",
    "LeafScan",
    "ForestScanner",
    "ReferenceScanner",
    "MoveSet",
    "DegenerateNeighborhood",
    "enumerate_moves",
    "prior_ratio_split",
    "log_prior_ratio_split",
    "informed_weight",
    "apply_move",
    "IITState",
    "iit_step",
    "run_iit",
    "importance_log_weights",
    "sample_tree",
    "log_tree_prior",
    "log_surrogate_marginal",
]

SPLIT, MERGE = 0, 1
_LOG_HALF = math.log(0.5)


class DegenerateNeighborhood(RuntimeError):
    """The current tree has no split and no merge move."""


@numba.njit(cache=True, nogil=True)
def _scan_kernel(vx, S, js, hs, order, parent, nv, mu0, sigma_mu2):
    """Edge types and right-side J/H sums of one sample set over the whole forest."""
    cnt = np.zeros(nv, np.int64)
    sub_j = np.zeros(nv)
    sub_h = np.zeros(nv)
    for g in range(vx.shape[0]):
        for a in range(S.size):
            v = vx[g, S[a]]
            cnt[v] += 1
            sub_j[v] += js[a]
            sub_h[v] += hs[a]
    sub_c = cnt.copy()
    kids = np.zeros(nv, np.int64)
    # reverse preorder: every child is folded into its parent exactly once
    for k in range(nv - 1, -1, -1):
        v = order[k]
        q = parent[v]
        if q >= 0:
            sub_c[q] += sub_c[v]
            sub_j[q] += sub_j[v]
            sub_h[q] += sub_h[v]
            if sub_c[v] > 0:
                kids[q] += 1
    types = np.empty(nv, np.int8)
    total = S.size
    n_valid = 0
    for v in range(nv):
        if parent[v] < 0 or sub_c[v] == 0 or sub_c[v] == total:
            types[v] = -1
        elif kids[v] == 1 and cnt[v] == 0:
            types[v] = 0
        else:
            types[v] = 1
            n_valid += 1
    ids = np.empty(n_valid, np.int64)
    llr = np.empty(n_valid)
    jp, hp = js.sum(), hs.sum()
    inv = 1.0 / sigma_mu2
    m = mu0 * inv
    pp = hp + inv
    k = 0
    for v in range(nv):
        if types[v] == 1:
            jr, hr = sub_j[v], sub_h[v]
            pl, pr = hp - hr + inv, hr + inv
            quad = (jp - jr + m) ** 2 / pl + (jr + m) ** 2 / pr - (jp + m) ** 2 / pp - mu0 * m
            ids[k] = v
            llr[k] = 0.5 * quad - 0.5 * (np.log(pl) + np.log(pr) - np.log(pp)) - 0.5 * np.log(sigma_mu2)
            k += 1
    return types, ids, llr


class Forest:
    """Candidate graphs laid out in one vertex index space."""

    def __init__(self, graphs: Sequence[Arborescence]):
        if not graphs:
            raise ValueError("need at least one candidate graph")
        n = graphs[0].n_samples
        if any(g.n_samples != n for g in graphs):
            raise ValueError("candidate graphs disagree on the number of samples")
        self.graphs = list(graphs)
        sizes = np.array([g.n_vertices for g in graphs])
        self.offset = np.concatenate([[0], np.cumsum(sizes)])
        self.n_vertices = int(self.offset[-1])
        self.graph_of = np.repeat(np.arange(len(graphs)), sizes)
        self.parent = np.concatenate([np.where(g.parent >= 0, g.parent + o, -1)
                                      for g, o in zip(graphs, self.offset)])
        self.order = np.concatenate([g.order + o for g, o in zip(graphs, self.offset)])
        self.tin = np.concatenate([g.tin + o for g, o in zip(graphs, self.offset)])
        self.tout = np.concatenate([g.tout + o for g, o in zip(graphs, self.offset)])
        self.is_root = self.parent < 0
        self.nonroot = np.flatnonzero(~self.is_root)
        self.vx = np.stack([g.vertex_of + o for g, o in zip(graphs, self.offset)])
        # atoms: samples sharing a vertex in every graph; no rule separates them
        _, first, atom = np.unique(self.vx.T, axis=0, return_index=True, return_inverse=True)
        self.atom = atom.ravel()
        self.atom_vertex = self.vx[:, first]

    @property
    def n_graphs(self):
        return len(self.graphs)

    def local(self, gv: int) -> tuple[int, int]:
        g = int(self.graph_of[gv])
        return g, int(gv - self.offset[g])

    def right_mask(self, gv: int, samples) -> np.ndarray:
        g = self.graph_of[gv]
        t = self.tin[self.vx[g, samples]]
        return (t >= self.tin[gv]) & (t < self.tout[gv])

    def subtree_sums(self, per_vertex):
        c = np.concatenate([[0], np.cumsum(per_vertex[self.order])])
        return c[self.tout] - c[self.tin]


@dataclass(eq=False)
class LeafScan:
    """Split options of one training sample set.

    ``ids`` are forest vertices of the valid (canonical) edges, ``llr``
    their split log-ratios and ``log_pi`` the log of the uniform
    graph-then-edge rule probability.
    """

    train: np.ndarray
    stats: LeafStats
    ids: np.ndarray
    llr: np.ndarray
    log_pi: np.ndarray
    per_graph: np.ndarray
    edge_type: np.ndarray
    scanner: object = field(repr=False, default=None)
    _atoms: tuple | None = field(repr=False, default=None)
    _prior_terms: dict = field(repr=False, default_factory=dict)

    @property
    def has_split(self) -> bool:
        return self.ids.size > 0

    def log_pi_graph(self, g: int) -> float:
        """Log rule probability of any valid edge of graph ``g``."""
        k = self.per_graph[g]
        if k == 0:
            return -math.inf
        return -math.log(np.count_nonzero(self.per_graph)) - math.log(k)

    def prior_terms(self, depth: int, alpha: float, beta: float):
        """Log prior ratios of all valid splits at ``depth``, and ``llr + lpr + log_pi``."""
        memo = self._prior_terms
        if depth not in memo:
            lpr = log_prior_ratio_split(depth, self.log_pi, alpha, beta)
            memo[depth] = lpr, self.llr + lpr + self.log_pi
        return memo[depth]

    def atom_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct atoms on the (left, right) side of every valid edge."""
        if self._atoms is None:
            self._atoms = self.scanner.edge_atom_counts(self)
        return self._atoms


class ForestScanner:
    """Cached split options of sample sets under a fixed gradient table."""

    def __init__(self, forest: Forest, table: GradientTable, prior: PriorConfig):
        self.forest = forest
        self.table = table
        self.prior = prior
        self._cache: dict[bytes, LeafScan] = {}

    def scan_node(self, nd) -> LeafScan:
        """Scan of a tree node's training samples, memoised on the node."""
        memo = nd.__dict__.get("_scan")
        if memo is not None and memo[0] is self:
            return memo[1]
        sc = self.scan(nd.train)
        nd.__dict__["_scan"] = (self, sc)
        return sc

    def scan(self, train) -> LeafScan:
        train = np.asarray(train, dtype=np.int64)
        key = train.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self._scan(train)
        return hit

    def _scan(self, S) -> LeafScan:
        f, tab, prior = self.forest, self.table, self.prior
        js, hs = tab.j[S], tab.h[S]
        stats = LeafStats(float(js.sum()), float(hs.sum()), int(S.size))
        types, ids, llr = _scan_kernel(f.vx, S, js, hs, f.order, f.parent, f.n_vertices,
                                       prior.mu0, prior.sigma_mu2)
        if ids.size:
            gids = f.graph_of[ids]
            per_graph = np.bincount(gids, minlength=f.n_graphs)
            log_pi = -math.log(np.count_nonzero(per_graph)) - np.log(per_graph[gids])
        else:
            log_pi = np.zeros(0)
            per_graph = np.zeros(f.n_graphs, dtype=np.int64)
        return LeafScan(S, stats, ids, llr, log_pi, per_graph, types, self)

    def edge_atom_counts(self, scan: LeafScan):
        f = self.forest
        atoms = np.unique(f.atom[scan.train])
        per_vertex = np.bincount(f.atom_vertex[:, atoms].ravel(), minlength=f.n_vertices)
        right = f.subtree_sums(per_vertex)[scan.ids]
        return atoms.size - right, right


class ReferenceScanner(ForestScanner):
    """Same interface, computed graph by graph through the split tables.

    Slow; used to cross-check :class:`ForestScanner`.
    """

    def _scan(self, S) -> LeafScan:
        f, tab, prior = self.forest, self.table, self.prior
        n = f.vx.shape[1]
        labels = np.zeros(n, dtype=np.int64)
        mask = np.zeros(n, dtype=bool)
        mask[S] = True
        stats = LeafStats(float(tab.j[S].sum()), float(tab.h[S].sum()), int(S.size))
        ids, llr, types = [], [], []
        for g, graph in enumerate(f.graphs):
            vs = vertex_stats_from_labels(graph, labels, mask, tab, [0])
            st = recursive_split_scan(graph, vs, [stats], prior)
            types.append(st.edge_type[:, 0])
            valid = np.flatnonzero(st.edge_type[:, 0] == VALID)
            ids.append(valid + f.offset[g])
            llr.append(st.ratio[valid, 0])
        ids = np.concatenate(ids)
        per_graph = np.bincount(f.graph_of[ids], minlength=f.n_graphs)
        if ids.size:
            gids = f.graph_of[ids]
            log_pi = -math.log(np.count_nonzero(per_graph)) - np.log(per_graph[gids])
        else:
            log_pi = np.zeros(0)
        return LeafScan(S, stats, ids, np.concatenate(llr), log_pi, per_graph,
                        np.concatenate(types).astype(np.int8), self)

    def edge_atom_counts(self, scan: LeafScan):
        f = self.forest
        left, right = [], []
        for gv in scan.ids:
            r = f.right_mask(gv, scan.train)
            right.append(np.unique(f.atom[scan.train[r]]).size)
            left.append(np.unique(f.atom[scan.train[~r]]).size)
        return np.array(left, dtype=np.int64), np.array(right, dtype=np.int64)


# ------------------------------------------------------------------ priors

def log_prior_ratio_split(depth, log_pi, alpha: float, beta: float):
    """Log of the tree-prior ratio for splitting a leaf at ``depth``."""
    d = np.asarray(depth, dtype=float)
    return (math.log(alpha) + 2 * np.log1p(-alpha / (2 + d) ** beta)
            - np.log((1 + d) ** beta - alpha) + log_pi)


def prior_ratio_split(depth, pi_g: float, pi_e: float, alpha: float, beta: float) -> float:
    """Tree-prior ratio of splitting a leaf at ``depth`` by a rule of prior mass ``pi_g * pi_e``."""
    return float(np.exp(log_prior_ratio_split(depth, math.log(pi_g) + math.log(pi_e), alpha, beta)))


def informed_weight(log_lik_ratio, log_prior_ratio, log_q_forward, log_q_backward):
    """Log of ``q_f * h(r * q_b / q_f)`` with ``h = sqrt``."""
    return 0.5 * (np.asarray(log_lik_ratio) + log_prior_ratio + log_q_forward + log_q_backward)


def log_tree_prior(tree: DecisionTree, scanner: ForestScanner, prior: PriorConfig) -> float:
    """Log prior mass of a tree: depth-dependent split probabilities times uniform rules."""
    out = 0.0
    for nd in tree.nodes:
        if nd.kind == "leaf":
            out += math.log1p(-float(prior.p_split(nd.depth)))
        elif nd.kind == "internal":
            out += math.log(float(prior.p_split(nd.depth)))
            out += scanner.scan_node(nd).log_pi_graph(nd.rule.graph_id)
    return out


def log_surrogate_marginal(tree: DecisionTree, scanner: ForestScanner, prior: PriorConfig) -> float:
    """Sum of leaf log marginals under the quadratic surrogate (constants dropped)."""
    return sum(log_m_hat(scanner.scan_node(tree.node(k)).stats, 0.0, prior) for k in tree.leaves())


# ------------------------------------------------------------------- moves

class MoveSet:
    """All moves out of one tree, as parallel arrays.

    ``node`` is the leaf to split or the internal node to merge; ``gv`` the
    forest vertex of the split edge (-1 for merges).  The four log terms
    of the informed weight are assembled on first access.
    """

    def __init__(self, node, gv, log_eta, parts):
        self.node = node
        self.gv = gv
        self.log_eta = log_eta
        self._parts = parts  # (llr, lpr, lqf, lqb) per block, scalars allowed
        self._terms = None

    def __len__(self):
        return self.node.size

    @property
    def kind(self) -> np.ndarray:
        return (self.gv < 0).astype(np.int8)

    def _term(self, i):
        if self._terms is None:
            cols = []
            for j in range(4):
                cols.append(np.concatenate([np.broadcast_to(np.asarray(part[j], float), (size,))
                                            for size, part in self._parts] or [np.zeros(0)]))
            self._terms = cols
        return self._terms[i]

    log_lik_ratio = property(lambda self: self._term(0))
    log_prior_ratio = property(lambda self: self._term(1))
    log_q_forward = property(lambda self: self._term(2))
    log_q_backward = property(lambda self: self._term(3))

    def log_z(self) -> float:
        le = self.log_eta
        m = le.max()
        return float(m + math.log(np.exp(le - m).sum()))


def enumerate_moves(tree: DecisionTree, scanner: ForestScanner, prior: PriorConfig) -> MoveSet:
    """Every split and merge move out of ``tree`` with its informed weight terms."""
    alpha, beta = prior.alpha, prior.beta
    nodes = tree.nodes
    cap = tree.max_depth
    leaves, second = [], []
    for nd in nodes:
        if nd.kind == "leaf":
            leaves.append(nd)
        elif nd.kind == "internal" and nodes[nd.children[0]].kind == "leaf" \
                and nodes[nd.children[1]].kind == "leaf":
            second.append(nd)
    scans = {nd.id: scanner.scan_node(nd) for nd in leaves}
    spl = {nd.id: nd.depth < cap and scans[nd.id].has_split for nd in leaves}
    n_spl = sum(spl.values())
    w2 = len(second)
    if nodes[0].kind == "leaf":
        if n_spl == 0:
            raise DegenerateNeighborhood("root leaf has no valid split in any candidate graph")
        p_split = 1.0
    else:
        p_split = 0.5 if n_spl else 0.0

    node, gv, eta, parts = [], [], [], []
    if p_split > 0:
        lqf0 = math.log(p_split) - math.log(n_spl)
        for nd in leaves:
            if not spl[nd.id]:
                continue
            sc = scans[nd.id]
            m = sc.ids.size
            if nd.parent < 0:
                w2_star = 1
            else:
                sib = nodes[nd.parent].children[1 - nd.side]
                w2_star = w2 + 1 - (nodes[sib].kind == "leaf")
            # backward merge probability: 1/2 unless the new tree has no splittable leaf
            if n_spl > 1:
                back = _LOG_HALF - math.log(w2_star)
            elif nd.depth + 1 < cap:
                left, right = sc.atom_counts()
                back = np.where((left >= 2) | (right >= 2), _LOG_HALF, 0.0) - math.log(w2_star)
            else:
                back = -math.log(w2_star)
            lpr, base = sc.prior_terms(nd.depth, alpha, beta)
            node.append(np.full(m, nd.id))
            gv.append(sc.ids)
            eta.append(0.5 * (base + (lqf0 + back)))
            parts.append((m, (sc.llr, lpr, lqf0 + sc.log_pi, back)))
    if p_split < 1 and w2:
        lqf_m = math.log(1 - p_split) - math.log(w2)
        for nd in second:
            a, b = nd.children
            log_pi = scanner.scan_node(nd).log_pi_graph(nd.rule.graph_id)
            ls_star = n_spl - spl[a] - spl[b] + 1
            ps_star = 0.0 if nd.parent < 0 else _LOG_HALF
            llr = merge_log_ratio(scans[a].stats, scans[b].stats, prior)
            d = nd.depth
            lpr = -(math.log(alpha) + 2 * math.log1p(-alpha / (2 + d) ** beta)
                    - math.log((1 + d) ** beta - alpha) + log_pi)
            lqb = ps_star - math.log(ls_star) + log_pi
            parts.append((1, (llr, lpr, lqf_m, lqb)))
            eta.append([0.5 * (llr + lpr + lqf_m + lqb)])
        node.append([nd.id for nd in second])
        gv.append(np.full(w2, -1))
    cat = np.concatenate
    return MoveSet(cat(node).astype(np.int64), cat(gv).astype(np.int64), cat(eta).astype(float), parts)


def apply_move(tree: DecisionTree, moves: MoveSet, i: int, scanner: ForestScanner, rng) -> None:
    """Apply move ``i``; a split edge is redrawn uniformly from its equivalent set."""
    node = int(moves.node[i])
    if moves.kind[i] == MERGE:
        tree.apply_merge(node)
        return
    f = scanner.forest
    gv = int(moves.gv[i])
    g, e = f.local(gv)
    nd = tree.node(node)
    types = scanner.scan_node(nd).edge_type[f.offset[g]:f.offset[g + 1]]
    e = resolve_equivalent_edge(f.graphs[g], types, e, rng)
    gv = int(f.offset[g] + e)
    tree.split_by_mask(node, GraphSplitRule(g, e), f.right_mask(gv, nd.samples))


def _draw(log_w, rng) -> int:
    w = np.exp(log_w - log_w.max())
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), c.size - 1))


# --------------------------------------------------------------------- IIT

@dataclass
class IITState:
    """Current tree, its move list and the log of visited states.

    ``visited`` holds ``(leaf ids, log Z)`` pairs, newest last, at most
    ``window`` of them.
    """

    tree: DecisionTree
    scanner: ForestScanner
    prior: PriorConfig
    moves: MoveSet | None = None
    log_z: float = math.nan
    visited: list = field(default_factory=list)
    window: int | None = None

    def refresh(self):
        self.moves = enumerate_moves(self.tree, self.scanner, self.prior)
        self.log_z = self.moves.log_z()

    def record(self):
        self.visited.append((tuple(self.tree.leaves()), self.log_z))
        if self.window is not None and len(self.visited) > self.window:
            del self.visited[0]


def iit_step(state: IITState, seed=None) -> IITState:
    """Move to a neighbour drawn with probability ``eta / Z`` and log the new state."""
    rng = np.random.default_rng(seed)
    if state.moves is None:
        state.refresh()
    if len(state.moves) == 0:
        raise DegenerateNeighborhood("no moves out of the current tree")
    i = _draw(state.moves.log_eta, rng)
    apply_move(state.tree, state.moves, i, state.scanner, rng)
    state.refresh()
    state.record()
    return state


def run_iit(tree: DecisionTree, scanner: ForestScanner, prior: PriorConfig, K: int, seed=None,
            window: int | None = None) -> IITState:
    """``K`` informed steps from ``tree``; visits ``T_1 .. T_K`` are logged."""
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    state = IITState(tree, scanner, prior, window=window)
    for _ in range(K):
        iit_step(state, rng)
    return state


def _exact_minus_surrogate(model, y, train, table, phi_minus_t, mu):
    """Sum over training samples of exact minus quadratic log-likelihood at ``mu``.

    ``mu`` holds every sample's leaf weight; full-length vectors keep a
    per-sample offset aligned.
    """
    d = (mu - table.phi_t_hat)[train]
    exact = model.loglik(y, phi_minus_t + mu)[train]
    quad = model.loglik(y, table.phi_hat)[train] + table.ldot[train] * d + 0.5 * table.lddot[train] * d * d
    return float(np.sum(exact - quad))


def importance_log_weights(state: IITState, model: ResponseModel | None, y, rng):
    """Log importance weights of the visited states, with a leaf-weight draw per state.

    Returns ``(log_w, draws)`` where ``draws[k]`` maps leaf id to weight.
    For the normal model the surrogate is exact and only ``-log Z`` remains.
    """
    tree, scanner, prior = state.tree, state.scanner, state.prior
    table = scanner.table
    gaussian = model is None or model.kind == "normal"
    log_w = np.empty(len(state.visited))
    draws = []
    if not gaussian:
        phi_minus_t = table.phi_hat - table.phi_t_hat
        train = np.flatnonzero(tree.train_mask)
    for k, (leaves, log_z) in enumerate(state.visited):
        log_w[k] = -log_z
        if gaussian:
            draws.append(None)
            continue
        tree.restore(leaves)
        mu = _draw_leaf_weights(tree, leaves, scanner, prior, rng)
        draws.append(mu)
        w = np.zeros(len(tree.nodes))
        w[list(mu)] = list(mu.values())
        log_w[k] += _exact_minus_surrogate(model, y, train, table, phi_minus_t, w[tree.leaf_of])
    return log_w, draws


def _draw_leaf_weights(tree, leaves, scanner, prior, rng) -> dict:
    out = {}
    for k in leaves:
        mean, var = leaf_posterior(scanner.scan_node(tree.node(k)).stats, prior)
        out[k] = mean + math.sqrt(var) * rng.standard_normal()
    return out


def sample_tree(forest: Forest, table: GradientTable, prior: PriorConfig, train_mask, K: int,
                seed=None, model: ResponseModel | None = None, y=None, max_depth: int = 10,
                scanner: ForestScanner | None = None):
    """Grow one tree from the root and draw it with its leaf weights.

    Runs ``K`` informed steps, resamples one visited state by importance
    weight and returns ``(tree, contribution)`` where ``tree`` is compact
    with leaf weights set and ``contribution`` holds each sample's leaf
    weight.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    if scanner is None:
        scanner = ForestScanner(forest, table, prior)
    tree = DecisionTree(train_mask, max_depth)
    state = run_iit(tree, scanner, prior, K, rng, window=K)
    log_w, draws = importance_log_weights(state, model, y, rng)
    pick = _draw(log_w, rng)
    leaves = state.visited[pick][0]
    tree.restore(leaves)
    mu = draws[pick]
    if mu is None:
        mu = _draw_leaf_weights(tree, leaves, scanner, prior, rng)
    for k in leaves:
        tree.node(k).leaf_weight = float(mu[k])
    out = tree.compact()
    contribution = np.array([nd.leaf_weight for nd in out.nodes])[out.leaf_of]
    return out, contribution
