import numpy as np
import pytest

from gsbart.synthetic import (
    CHAIN_STEP_LEVELS,
    chain_step,
    chain_step_mean,
    friedman,
    friedman_mean,
    generate_synthetic,
    graph_step,
    grid_graph,
)


def test_friedman_mean_at_centre():
    assert friedman_mean(np.full((1, 5), 0.5))[0] == pytest.approx(12.0710678, abs=1e-7)


def test_friedman_shapes_and_noise():
    d = friedman(200, sigma=0.0, seed=1)
    assert d.X.shape == (200, 5) and d.feature_names == ["x1", "x2", "x3", "x4", "x5"]
    np.testing.assert_array_equal(d.y, d.f)
    noisy = friedman(5000, sigma=2.0, seed=1)
    assert np.std(noisy.y - noisy.f) == pytest.approx(2.0, rel=0.05)


def test_chain_step_levels():
    assert chain_step_mean([0.1])[0] == -1.5
    # a value on a jump takes the upper level
    assert chain_step_mean([0.0, 0.25, 0.5, 0.75, 1.0]).tolist() == [-1.5, -0.5, 0.5, 1.5, 1.5]
    d = chain_step(100, sigma=0.0, seed=0)
    np.testing.assert_array_equal(d.y, chain_step_mean(d.X[:, 0]))
    assert set(d.f) <= set(CHAIN_STEP_LEVELS)


def test_seeded():
    a, b = chain_step(50, seed=3), chain_step(50, seed=3)
    np.testing.assert_array_equal(a.y, b.y)


@pytest.mark.parametrize("n,sigma", [(9, 1.0), (20, -0.1)])
def test_bad_arguments(n, sigma):
    with pytest.raises(ValueError):
        friedman(n, sigma)


def test_chain_step_needs_matching_levels():
    with pytest.raises(ValueError):
        chain_step(20, jumps=(0.5,), levels=(0.0,))


def test_grid_graph():
    edges, rc = grid_graph(3)
    assert edges.shape == (12, 2) and rc.shape == (9, 2)
    assert {tuple(e) for e in edges} >= {(0, 1), (0, 3), (4, 5), (4, 7)}


def test_graph_step():
    d = graph_step(300, sigma=0.0, seed=0, side=8)
    assert d.graph.vertex_count == 64 and d.vertex.shape == (300,)
    region = d.extra["region"]
    np.testing.assert_array_equal(d.f, np.array([-1.0, 0.0, 1.0])[region[d.vertex]])
    assert set(np.unique(region)) == {0, 1, 2}
    ds = d.to_dataset(0.25, seed=0)
    assert ds.columns["vertex"][0] == str(d.vertex[0])
    header, rows = d.header_and_rows()
    assert header == ["x1", "x2", "vertex", "y", "f"] and len(rows) == 300


def test_generate_by_name():
    assert generate_synthetic("friedman", 10, 1.0, 0).X.shape == (10, 5)
    with pytest.raises(ValueError):
        generate_synthetic("spiral", 10, 1.0)
