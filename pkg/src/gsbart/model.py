"""End-to-end fitting and posterior summaries on tabular data."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import FitConfig
from .data import Dataset, SchemaError
from .diagnostics import coverage, effective_sample_size, hdi, mspe
from .engine import scan_all_graphs
from .gibbs import initial_setup, run_sampler
from .graphs import (
    Arborescence,
    GraphError,
    build_chain_graph,
    default_cut_points,
    read_bin_assignment,
    read_structural_graph,
    sample_arborescence,
)
from .iit import Forest
from .likelihood import ResponseModel, gradient_table
from .store import Draw, PosteriorStore, StoreError
from .tree import DecisionTree

__all__ = [
    "GraphDef",
    "build_candidates",
    "fit",
    "phi_draws",
    "predict",
    "Prediction",
    "variable_importance",
    "partial_dependence",
    "diagnostic_report",
    "root_split_tables",
]

log = logging.getLogger(__name__)


@dataclass
class GraphDef:
    """Recipe for one candidate graph, re-applicable to new rows.

    Chain graphs bin feature ``label`` at ``cuts``; arborescences carry a
    parent array and take each row's vertex from ``bins`` (a column name
    or a row->vertex file).
    """

    kind: str
    label: str
    cuts: list | None = None
    parent: list | None = None
    bins: str | None = None
    lo: float | None = None
    hi: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d) -> "GraphDef":
        return cls(**d)

    def vertex_of(self, ds: Dataset) -> np.ndarray:
        if self.kind == "chain":
            return np.searchsorted(np.asarray(self.cuts), ds.feature(self.label), side="left")
        v = structural_bins(self.bins, ds)
        if v.size and v.max() >= len(self.parent):
            raise SchemaError(f"graph {self.label}: bin id {v.max()} exceeds the vertex count")
        return v

    def build(self, ds: Dataset) -> Arborescence:
        if self.kind == "chain":
            return build_chain_graph(ds.feature(self.label), self.cuts, self.label)
        return Arborescence(np.asarray(self.parent), self.vertex_of(ds), self.label)


def structural_bins(source: str, ds: Dataset) -> np.ndarray:
    """Vertex of every row, from a data column or a bin file."""
    if source in ds.columns:
        try:
            v = np.array([int(float(x)) for x in ds.columns[source]], dtype=np.int64)
        except ValueError:
            raise SchemaError(f"bin column {source!r} must hold integer vertex ids") from None
    else:
        try:
            v = read_bin_assignment(source)
        except FileNotFoundError:
            raise SchemaError(f"bin source {source!r} is neither a column nor a file") from None
    if v.size != ds.n:
        raise SchemaError(f"bin source {source!r} has {v.size} rows, data has {ds.n}")
    if v.size and v.min() < 0:
        raise SchemaError(f"bin source {source!r} holds negative vertex ids")
    return v


def build_candidates(ds: Dataset, cfg: FitConfig, seed=None):
    """Graph definitions and, per tree, the indices of its candidate graphs.

    Every numeric feature yields one chain graph shared by all trees; each
    structural graph yields ``M`` random arborescences per tree.
    """
    rng = np.random.default_rng(seed)
    defs: list[GraphDef] = []
    for name in ds.feature_names:
        x = ds.feature(name)
        bins = cfg.feature_bins.get(name, cfg.chain_bins)
        try:
            cuts = default_cut_points(x, bins)
        except GraphError:
            log.warning("feature %s is constant; no chain graph built", name)
            continue
        defs.append(GraphDef("chain", name, cuts=[float(c) for c in cuts], lo=float(x.min()), hi=float(x.max())))
    shared = list(range(len(defs)))
    candidates = [list(shared) for _ in range(cfg.sampler.n_trees)]
    for spec in cfg.structural:
        bins = structural_bins(spec.bins, ds)
        g = read_structural_graph(spec.edges, label=spec.label, bins=bins)
        for t in range(cfg.sampler.n_trees):
            for _ in range(spec.M):
                a = sample_arborescence(g, rng, spec.label)
                candidates[t].append(len(defs))
                defs.append(GraphDef("arborescence", spec.label, parent=a.parent.tolist(), bins=spec.bins))
    if not defs:
        raise GraphError("no candidate graph could be built from the data")
    return defs, candidates


def _forests(defs, candidates, ds):
    built = [d.build(ds) for d in defs]
    cache = {}
    out = []
    for cand in candidates:
        key = tuple(cand)
        if key not in cache:
            cache[key] = Forest([built[k] for k in cand])
        out.append(cache[key])
    return out


def _response_setup(ds: Dataset, kind: str):
    """Model-scale responses for every fit plus what is needed to undo the scaling."""
    train = ds.train_mask
    if kind == "normal":
        lo, hi = float(ds.y[train].min()), float(ds.y[train].max())
        if hi <= lo:
            raise SchemaError("training response is constant")
        y = np.where(np.isfinite(ds.y), (ds.y - lo) / (hi - lo) - 0.5, 0.0)
        return [y], [ResponseModel("normal")], {"lo": lo, "hi": hi}
    if kind == "count":
        intercept = math.log(max(float(ds.y[train].mean()), 1e-3))
        off = intercept + (ds.offset if ds.offset is not None else 0.0)
        y = np.where(np.isfinite(ds.y), ds.y, 0.0)
        return [y], [ResponseModel("count", offset=np.broadcast_to(off, y.shape).copy())], {"intercept": intercept}
    classes = sorted(set(ds.y[train].tolist()))
    if len(classes) < 2:
        raise SchemaError("classification needs at least two classes in the training rows")
    ys = [np.array([1.0 if v == c else 0.0 for v in ds.y]) for c in classes]
    return ys, [ResponseModel("binary") for _ in classes], {"classes": classes}


def fit(ds: Dataset, cfg: FitConfig, progress=None) -> PosteriorStore:
    """Run the sampler on ``ds`` and collect the post-burn-in posterior."""
    cfg.validate()
    if not ds.train_mask.any():
        raise SchemaError("no training rows")
    s = cfg.sampler
    defs, candidates = build_candidates(ds, cfg, seed=[s.seed, 1])
    forests = _forests(defs, candidates, ds)
    ys, models, scaling = _response_setup(ds, cfg.model)
    store = PosteriorStore({
        "model": cfg.model,
        "fits": [m.kind for m in models],
        "scaling": scaling,
        "features": list(ds.feature_names),
        "graphs": [d.to_dict() for d in defs],
        "candidates": candidates,
        "config": cfg.to_dict(),
    })
    labels = [d.label for d in defs]
    for c, (y, model) in enumerate(zip(ys, models)):
        trace_cb = _trace_recorder(store, c, ds, y, model, scaling, cfg.model, progress)
        _, records = run_sampler(y, ds.train_mask, forests, model, replace(s, seed=s.seed + 7919 * c),
                                 on_sweep=trace_cb)
        draws = []
        for rec in records:
            draws.append(Draw(rec.sweep, rec.trees, rec.sigma, rec.sigma_mu2))
            for t, tree in enumerate(rec.trees):
                for gid in tree.split_graphs():
                    lab = labels[candidates[t][gid]]
                    store.importance[lab] = store.importance.get(lab, 0) + 1
        store.draws.append(draws)
    for lab in set(labels):
        store.importance.setdefault(lab, 0)
    return store


def _trace_recorder(store, c, ds, y, model, scaling, kind, progress):
    train, test = ds.train_mask, ~ds.train_mask
    has_test = test.any() and (kind == "classification" or np.all(np.isfinite(ds.y[test])))

    def record(state):
        phi = state.phi_hat
        sweep = state.sweep - 1
        if kind == "normal":
            pred = (phi + 0.5) * (scaling["hi"] - scaling["lo"]) + scaling["lo"]
            store.trace.append((c, sweep, "train_mspe", float(np.mean((pred[train] - ds.y[train]) ** 2))))
            if has_test:
                store.trace.append((c, sweep, "test_mspe", float(np.mean((pred[test] - ds.y[test]) ** 2))))
        elif kind == "count":
            rate = np.exp(np.clip(phi + model.offset, -30, 30))
            store.trace.append((c, sweep, "train_rmspe", float(np.sqrt(np.mean((rate[train] - ds.y[train]) ** 2)))))
            if has_test:
                store.trace.append((c, sweep, "test_rmspe", float(np.sqrt(np.mean((rate[test] - ds.y[test]) ** 2)))))
        else:
            ll = model.loglik(y, phi)
            store.trace.append((c, sweep, "train_loglik", float(ll[train].sum())))
            if has_test:
                store.trace.append((c, sweep, "test_loglik", float(ll[test].sum())))
        if progress is not None:
            progress(c, sweep)

    return record


def root_split_tables(ds: Dataset, cfg: FitConfig, tree_index: int = 0):
    """Split tables of one tree's candidate graphs at the start of the first sweep.

    Returns TSV rows ``(graph, label, vertex, leaf, edge_type, right_count,
    log_ratio)``; a debugging aid.
    """
    cfg.validate()
    s = cfg.sampler
    if not 0 <= tree_index < s.n_trees:
        raise ValueError(f"tree index must lie in [0, {s.n_trees})")
    defs, candidates = build_candidates(ds, cfg, seed=[s.seed, 1])
    cand = candidates[tree_index]
    graphs = [defs[k].build(ds) for k in cand]
    ys, models, _ = _response_setup(ds, cfg.model)
    model, prior = initial_setup(ys[0], ds.train_mask, models[0], s)
    zero = np.zeros(ds.n)
    table = gradient_table(model, ys[0], zero, zero)
    tree = DecisionTree(ds.train_mask, s.max_depth)
    rows = []
    for g, st in enumerate(scan_all_graphs(graphs, tree, table, prior, cfg.workers)):
        for v in range(st.edge_type.shape[0]):
            for k, leaf in enumerate(st.leaves):
                rows.append((g, defs[cand[g]].label, v, leaf, int(st.edge_type[v, k]),
                             int(st.right_count[v, k]), float(st.ratio[v, k])))
    return rows


# ------------------------------------------------------------- prediction

def _routing(store: PosteriorStore, ds: Dataset):
    defs = [GraphDef.from_dict(d) for d in store.meta["graphs"]]
    for d in defs:
        if d.kind == "chain" and d.label not in ds.feature_names:
            raise SchemaError(f"data lacks feature {d.label!r} used by the model")
    built = [d.build(ds) for d in defs]
    per_tree = [([built[k] for k in cand], [built[k].vertex_of for k in cand])
                for cand in store.meta["candidates"]]
    return per_tree


def phi_draws(store: PosteriorStore, ds: Dataset, fit_index: int = 0, workers: int = 1) -> np.ndarray:
    """Latent function of every retained draw at every row, on the model scale."""
    if store.is_empty():
        raise StoreError("posterior store holds no draws")
    per_tree = _routing(store, ds)

    def one(draw):
        contrib = np.stack([tree.predict(per_tree[t][1], per_tree[t][0]) for t, tree in enumerate(draw.trees)])
        return contrib.sum(axis=0)

    draws = store.draws[fit_index]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, draws)))
    return np.array([one(d) for d in draws])


@dataclass
class Prediction:
    """Per-row posterior summaries on the response scale."""

    model: str
    mean: np.ndarray  # normal: fitted mean; count: rate; classification: class probabilities (n, C)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    mean_lower: np.ndarray | None = None
    mean_upper: np.ndarray | None = None
    labels: np.ndarray | None = None
    classes: list | None = None

    def rows(self, train_mask=None):
        n = self.mean.shape[0]
        split = ["train" if t else "test" for t in train_mask] if train_mask is not None else ["-"] * n
        if self.model == "classification":
            header = ["row", "split", "class"] + [f"p_{c}" for c in self.classes]
            body = [[i, split[i], self.labels[i], *self.mean[i].tolist()] for i in range(n)]
        else:
            header = ["row", "split", "mean", "lower", "upper", "mean_lower", "mean_upper"]
            body = [[i, split[i], self.mean[i], self.lower[i], self.upper[i], self.mean_lower[i],
                     self.mean_upper[i]] for i in range(n)]
        return header, body


def _unscale(store, phi):
    sc = store.meta["scaling"]
    return (phi + 0.5) * (sc["hi"] - sc["lo"]) + sc["lo"]


def predict(store: PosteriorStore, ds: Dataset, seed=0, level: float = 0.95, workers: int = 1) -> Prediction:
    """Posterior mean and highest-density intervals for every row.

    Normal: ``lower``/``upper`` bound the posterior predictive (latent
    function plus noise); ``mean_lower``/``mean_upper`` the mean function.
    Count: intervals of the rate.  Classification: softmax of the
    posterior-mean latent functions.
    """
    kind = store.meta["model"]
    rng = np.random.default_rng(seed)
    if kind == "normal":
        phi = phi_draws(store, ds, 0, workers)
        sc = store.meta["scaling"]
        f = _unscale(store, phi)
        sig = np.array([d.sigma for d in store.draws[0]]) * (sc["hi"] - sc["lo"])
        pred = f + sig[:, None] * rng.standard_normal(f.shape)
        lo, hi = hdi(pred, level)
        mlo, mhi = hdi(f, level)
        return Prediction(kind, f.mean(axis=0), lo, hi, mlo, mhi)
    if kind == "count":
        phi = phi_draws(store, ds, 0, workers)
        off = store.meta["scaling"]["intercept"] + (ds.offset if ds.offset is not None else 0.0)
        rate = np.exp(np.clip(phi + off, -30, 30))
        lo, hi = hdi(rate, level)
        return Prediction(kind, rate.mean(axis=0), lo, hi, lo, hi)
    classes = store.meta["scaling"]["classes"]
    means = np.column_stack([phi_draws(store, ds, c, workers).mean(axis=0) for c in range(len(classes))])
    z = means - means.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    labels = np.array([classes[k] for k in probs.argmax(axis=1)], dtype=object)
    return Prediction(kind, probs, labels=labels, classes=classes)


def variable_importance(store: PosteriorStore):
    """``(label, count, share)`` rows and a flag telling whether any split was recorded."""
    total = sum(store.importance.values())
    rows = [(k, v, v / total if total else 0.0) for k, v in sorted(store.importance.items())]
    return rows, total > 0


def partial_dependence(store: PosteriorStore, ds: Dataset, feature: str, grid, level: float = 0.95,
                       workers: int = 1):
    """``(value, mean, lower, upper)`` rows: the feature set to each grid value for every row.

    Values outside the range seen at training are clamped (with a warning).
    """
    defs = [GraphDef.from_dict(d) for d in store.meta["graphs"]]
    chain = [d for d in defs if d.kind == "chain" and d.label == feature]
    if not chain:
        raise SchemaError(f"feature {feature!r} has no chain graph in this model")
    lo, hi = chain[0].lo, chain[0].hi
    kind = store.meta["model"]
    rows = []
    for g in np.asarray(grid, dtype=float):
        v = float(min(max(g, lo), hi))
        if v != g:
            log.warning("grid value %s clamped to %s", g, v)
        ds_g = ds.with_feature(feature, np.full(ds.n, v))
        if kind == "classification":
            for c, cls in enumerate(store.meta["scaling"]["classes"]):
                curve = phi_draws(store, ds_g, c, workers).mean(axis=1)
                a, b = hdi(curve[:, None], level)
                rows.append((g, f"phi_{cls}", float(curve.mean()), float(a[0]), float(b[0])))
            continue
        phi = phi_draws(store, ds_g, 0, workers)
        if kind == "normal":
            out = _unscale(store, phi)
        else:
            off = store.meta["scaling"]["intercept"] + (ds.offset if ds.offset is not None else 0.0)
            out = np.exp(np.clip(phi + off, -30, 30))
        curve = out.mean(axis=1)
        a, b = hdi(curve[:, None], level)
        rows.append((g, "mean", float(curve.mean()), float(a[0]), float(b[0])))
    return rows


def diagnostic_report(store: PosteriorStore, ds: Dataset, level: float = 0.95, seed=0, workers: int = 1):
    """Rows ``(section, fit, index, metric, value)`` for plotting.

    ``trace``: per-sweep metrics recorded during training.  ``ess``: effective
    sample size of every row's latent-function chain (``ess_constant`` marks
    constant chains).  ``summary``: test error of the posterior mean and,
    for numeric models, interval coverage of held-out responses and of the
    truth column when present.
    """
    if store.is_empty():
        raise StoreError("posterior store holds no draws")
    kind = store.meta["model"]
    rows = [("trace", c, s, m, v) for c, s, m, v in store.trace]
    for c in range(len(store.draws)):
        phi = phi_draws(store, ds, c, workers)
        for i in range(ds.n):
            ess, const = effective_sample_size(phi[:, i])
            rows.append(("ess", c, i, "ess_constant" if const else "ess", ess))
    test = ~ds.train_mask
    pred = predict(store, ds, seed, level, workers)
    if kind == "classification":
        known = test & (ds.y != "")
        if known.any():
            acc = float(np.mean(pred.labels[known] == ds.y[known]))
            rows.append(("summary", 0, -1, "test_accuracy", acc))
        return rows
    has_y = test & np.isfinite(ds.y.astype(float))
    if has_y.any():
        err = mspe(pred.mean[has_y], ds.y[has_y])
        rows.append(("summary", 0, -1, "test_mspe" if kind == "normal" else "test_rmspe",
                     err if kind == "normal" else math.sqrt(err)))
        if kind == "normal":
            rows.append(("summary", 0, -1, "test_coverage_y",
                         coverage(pred.lower[has_y], pred.upper[has_y], ds.y[has_y])))
    if ds.truth is not None and test.any():
        rows.append(("summary", 0, -1, "test_coverage_truth",
                     coverage(pred.mean_lower[test], pred.mean_upper[test], ds.truth[test])))
        rows.append(("summary", 0, -1, "test_mspe_truth", mspe(pred.mean[test], ds.truth[test])))
    return rows
