import logging

import numpy as np
import pytest

from gsbart.config import FitConfig
from gsbart.data import Dataset, SchemaError
from gsbart.diagnostics import hdi
from gsbart.gibbs import SamplerConfig, run_sampler
from gsbart.model import (
    GraphDef,
    _forests,
    _response_setup,
    build_candidates,
    diagnostic_report,
    fit,
    partial_dependence,
    phi_draws,
    predict,
    root_split_tables,
    variable_importance,
)
from gsbart.store import Draw, PosteriorStore, StoreError
from gsbart.synthetic import chain_step, graph_step
from gsbart.tree import CompactTree


def small_cfg(**kw):
    s = SamplerConfig(n_trees=4, n_sweeps=6, burn_in=2, K=4, seed=5)
    return FitConfig(sampler=s, chain_bins=20, **kw)


@pytest.fixture(scope="module")
def data():
    return chain_step(80, 0.1, seed=0).to_dataset(0.25, seed=1)


@pytest.fixture(scope="module")
def store(data):
    return fit(data, small_cfg())


def leaf_only(weight):
    return CompactTree(np.array([0], np.int8), np.array([-1]), np.array([-1]), np.array([-1]), np.array([-1]),
                       np.array([weight]), np.array([0]))


def one_split(gid, edge, left, right):
    return CompactTree(np.array([1, 0, 0], np.int8), np.array([gid, -1, -1]), np.array([edge, -1, -1]),
                       np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0.0, left, right]),
                       np.array([0, 1, 1]))


def with_trees(store, trees_per_draw):
    """Copy of ``store`` whose draws hold the given trees."""
    draws = [Draw(k, list(trees), 0.1, 0.01) for k, trees in enumerate(trees_per_draw)]
    return PosteriorStore(dict(store.meta), [draws], {}, [])


def test_prediction_reproduces_final_sweep(data, store):
    cfg = small_cfg()
    defs, candidates = build_candidates(data, cfg, seed=[cfg.sampler.seed, 1])
    forests = _forests(defs, candidates, data)
    ys, models, _ = _response_setup(data, cfg.model)
    _, records = run_sampler(ys[0], data.train_mask, forests, models[0], cfg.sampler)
    phi = phi_draws(store, data)
    assert phi.shape == (cfg.sampler.n_sweeps - cfg.sampler.burn_in, data.n)
    np.testing.assert_array_equal(phi[-1], records[-1].phi)
    np.testing.assert_array_equal(phi[0], records[0].phi)


def test_single_leaf_trees_sum_weights(data, store):
    s = with_trees(store, [[leaf_only(0.1), leaf_only(-0.05), leaf_only(0.2), leaf_only(0.0)]])
    phi = phi_draws(s, data)
    np.testing.assert_allclose(phi, 0.25)
    pred = predict(s, data)
    sc = store.meta["scaling"]
    np.testing.assert_allclose(pred.mean, (0.25 + 0.5) * (sc["hi"] - sc["lo"]) + sc["lo"])


def test_rescaling_round_trip(data, store):
    pred = predict(store, data)
    # predictions are in the units of y, not on the [-0.5, 0.5] fitting scale
    assert np.corrcoef(pred.mean, data.y)[0, 1] > 0.8
    assert pred.mean.max() > 0.5 and pred.mean.min() < -0.5
    assert np.all(pred.lower <= pred.mean_lower + 1e-12) or np.all(pred.lower <= pred.upper)
    assert np.all(pred.mean_lower <= pred.mean_upper)


def test_predict_is_seeded(data, store):
    a, b = predict(store, data, seed=3), predict(store, data, seed=3)
    np.testing.assert_array_equal(a.lower, b.lower)


def test_empty_store_rejected(data, store):
    empty = PosteriorStore(dict(store.meta), [[]], {}, [])
    with pytest.raises(StoreError):
        predict(empty, data)


def test_importance_shares(store):
    rows, any_split = variable_importance(store)
    assert any_split
    assert sum(r[2] for r in rows) == pytest.approx(1.0)
    assert {r[0] for r in rows} == {"x1", "x2", "x3"}


def test_importance_single_feature():
    syn = chain_step(60, 0.1, seed=2, n_features=1)
    s = fit(syn.to_dataset(0.2, seed=0), small_cfg())
    rows, any_split = variable_importance(s)
    assert any_split and rows == [("x1", rows[0][1], 1.0)]


def test_importance_without_splits(store):
    s = with_trees(store, [[leaf_only(0.0)] * 4])
    s.importance = {"x1": 0, "x2": 0}
    rows, any_split = variable_importance(s)
    assert not any_split and all(r[2] == 0.0 for r in rows)


def _chain_gid(store, label):
    return [i for i, d in enumerate(store.meta["graphs"]) if d["kind"] == "chain" and d["label"] == label][0]


def test_partial_dependence_flat_for_unused_feature(data, store):
    gid = _chain_gid(store, "x1")
    edge = 10
    s = with_trees(store, [[one_split(gid, edge, -0.2, 0.3)] + [leaf_only(0.0)] * 3])
    rows = partial_dependence(s, data, "x2", np.linspace(0.05, 0.95, 7))
    means = [r[2] for r in rows]
    np.testing.assert_allclose(means, means[0], rtol=0, atol=1e-12)


def test_partial_dependence_steps_at_the_cut(data, store):
    gid = _chain_gid(store, "x1")
    cut = store.meta["graphs"][gid]["cuts"][9]  # edge 10 separates x <= cuts[9]
    s = with_trees(store, [[one_split(gid, 10, -0.2, 0.3)] + [leaf_only(0.0)] * 3])
    rows = partial_dependence(s, data, "x1", [cut - 1e-6, cut, cut + 1e-6])
    sc = store.meta["scaling"]
    unscale = lambda v: (v + 0.5) * (sc["hi"] - sc["lo"]) + sc["lo"]  # noqa: E731
    assert [r[2] for r in rows] == pytest.approx([unscale(-0.2), unscale(-0.2), unscale(0.3)])


def test_partial_dependence_clamps(data, store, caplog):
    gid = _chain_gid(store, "x1")
    hi = store.meta["graphs"][gid]["hi"]
    with caplog.at_level(logging.WARNING, logger="gsbart.model"):
        rows = partial_dependence(store, data, "x1", [hi, hi + 5.0])
    assert rows[0][2] == rows[1][2]
    assert rows[1][0] == hi + 5.0
    assert "clamped" in caplog.text


def test_partial_dependence_needs_chain_feature(data, store):
    with pytest.raises(SchemaError):
        partial_dependence(store, data, "nope", [0.5])


def test_hdi_is_the_shortest_window():
    rng = np.random.default_rng(0)
    draws = rng.gamma(2.0, size=(301, 3))
    lo, hi = hdi(draws, 0.9)
    k = int(np.ceil(0.9 * 301))
    for j in range(3):
        s = np.sort(draws[:, j])
        best = min(range(301 - k + 1), key=lambda i: s[i + k - 1] - s[i])  # brute force over windows
        assert (lo[j], hi[j]) == (s[best], s[best + k - 1])
        assert np.sum((draws[:, j] >= lo[j]) & (draws[:, j] <= hi[j])) >= k


def test_hdi_near_quantiles_for_symmetric_draws():
    draws = np.random.default_rng(0).standard_normal((200_000, 2)) * [1.0, 3.0]
    lo, hi = hdi(draws, 0.95)
    q = np.quantile(draws, [0.025, 0.975], axis=0)
    assert np.all(hi - lo <= q[1] - q[0])
    # the shortest window wanders where the density is flat; 0.1 sd covers its sampling noise
    assert np.all(np.abs(lo / [1.0, 3.0] + 1.96) < 0.1)
    assert np.all(np.abs(hi / [1.0, 3.0] - 1.96) < 0.1)


def test_diagnostic_report(data, store):
    rows = diagnostic_report(store, data)
    sections = {r[0] for r in rows}
    assert sections == {"trace", "ess", "summary"}
    metrics = {r[3]: r[4] for r in rows if r[0] == "summary"}
    assert set(metrics) == {"test_mspe", "test_coverage_y", "test_coverage_truth", "test_mspe_truth"}
    assert 0 <= metrics["test_coverage_y"] <= 1
    assert sum(r[0] == "ess" for r in rows) == data.n
    traces = [r for r in rows if r[0] == "trace" and r[3] == "train_mspe"]
    assert [r[2] for r in traces] == list(range(6))


def test_count_and_classification_models():
    syn = chain_step(60, 0.1, seed=4, n_features=2)
    ds = syn.to_dataset(0.25, seed=0)
    counts = Dataset(np.round(np.exp(syn.f)).astype(float), ds.X, ds.feature_names, ds.train_mask)
    s = fit(counts, small_cfg(model="count"))
    pred = predict(s, counts)
    assert np.all(pred.mean > 0) and np.all(pred.lower <= pred.upper)

    labels = np.array(["lo" if v < 0 else "hi" for v in syn.f], dtype=object)
    cls = Dataset(labels, ds.X, ds.feature_names, ds.train_mask)
    s = fit(cls, small_cfg(model="classification"))
    assert s.meta["scaling"]["classes"] == ["hi", "lo"]
    pred = predict(s, cls)
    np.testing.assert_allclose(pred.mean.sum(axis=1), 1.0)
    assert np.mean(pred.labels == labels) > 0.7
    rows = diagnostic_report(s, cls)
    assert [r[3] for r in rows if r[0] == "summary"] == ["test_accuracy"]


def test_structural_graph_fit(tmp_path):
    syn = graph_step(120, 0.1, seed=0)
    np.savetxt(tmp_path / "edges.txt", syn.graph.edges, fmt="%d")
    ds = syn.to_dataset(0.25, seed=0)
    from gsbart.config import StructuralSpec
    cfg = small_cfg(structural=[StructuralSpec("lattice", str(tmp_path / "edges.txt"), "vertex", M=2)])
    s = fit(ds, cfg)
    labels = [g["label"] for g in s.meta["graphs"]]
    assert labels.count("lattice") == 2 * cfg.sampler.n_trees
    assert s.importance["lattice"] > 0
    pred = predict(s, ds)
    assert np.mean((pred.mean - syn.f) ** 2) < np.var(syn.f)


def test_root_split_tables(data):
    rows = root_split_tables(data, small_cfg())
    assert {r[1] for r in rows} == {"x1", "x2", "x3"}
    valid = [r for r in rows if r[4] == 1]
    assert valid and all(np.isfinite(r[6]) for r in valid)
    assert all(r[6] == -np.inf for r in rows if r[4] != 1)


def test_graph_def_round_trip():
    d = GraphDef("chain", "x", cuts=[0.1, 0.2], lo=0.0, hi=1.0)
    assert GraphDef.from_dict(d.to_dict()) == d
