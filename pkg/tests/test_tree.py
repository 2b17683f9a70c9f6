import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsbart.engine import recursive_split_scan, vertex_stats_from_labels
from gsbart.graphs import Arborescence, build_chain_graph
from gsbart.likelihood import GradientTable, LeafStats, PriorConfig
from gsbart.tree import (
    CompactTree,
    DecisionTree,
    GraphSplitRule,
    TreeError,
    equivalent_edge_set,
    resolve_equivalent_edge,
)

from conftest import random_arborescence


def chain3():
    return build_chain_graph([0.1, 0.5, 0.9], [0.3, 0.7], "x")


def leaf_sets(tree):
    return sorted(sorted(tree.node(k).samples.tolist()) for k in tree.leaves())


def test_split_examples():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    left, right = tree.node(0).children
    assert tree.node(left).samples.tolist() == [0]
    assert tree.node(right).samples.tolist() == [1, 2]
    tree.apply_split(right, GraphSplitRule(0, 2), [g])
    assert leaf_sets(tree) == [[0], [1], [2]]
    assert tree.node(right).depth == 1 and all(tree.node(k).depth == 2 for k in tree.node(right).children)


def test_split_isolating_empty_bin_fails():
    g = build_chain_graph([0.1, 0.5, 0.9], [0.3, 0.7, 0.95])
    tree = DecisionTree(np.ones(3, bool))
    with pytest.raises(TreeError):
        tree.apply_split(0, GraphSplitRule(0, 3), [g])
    assert tree.is_root_only()


def test_split_needs_training_samples_on_both_sides():
    g = chain3()
    tree = DecisionTree(np.array([True, True, False]))
    with pytest.raises(TreeError):
        tree.apply_split(0, GraphSplitRule(0, 2), [g])  # right side holds only a test sample


def test_split_errors():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    with pytest.raises(TreeError):
        tree.apply_split(0, GraphSplitRule(0, 0), [g])  # root has no edge
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    with pytest.raises(TreeError):
        tree.apply_split(0, GraphSplitRule(0, 2), [g])  # not a leaf


def test_depth_cap():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool), max_depth=1)
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    with pytest.raises(TreeError):
        tree.apply_split(tree.node(0).children[1], GraphSplitRule(0, 2), [g])


def test_merge_examples():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    tree.apply_merge(0)
    assert tree.is_root_only()
    assert leaf_sets(tree) == [[0, 1, 2]]
    assert tree.leaf_of.tolist() == [0, 0, 0]

    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    right = tree.node(0).children[1]
    tree.apply_split(right, GraphSplitRule(0, 2), [g])
    with pytest.raises(TreeError):
        tree.apply_merge(0)  # right child is internal
    with pytest.raises(TreeError):
        tree.apply_merge(tree.node(0).children[0])  # a leaf


def test_second_generation_internals():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    assert tree.second_generation_internals() == []
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    assert tree.second_generation_internals() == [0]
    right = tree.node(0).children[1]
    tree.apply_split(right, GraphSplitRule(0, 2), [g])  # two internal nodes, three leaves
    assert tree.second_generation_internals() == [right]
    assert tree.n_leaves() == 3


def _random_moves(rng, graphs, tree, steps):
    """Random valid splits and merges; returns the list of (structure, leaf_of) snapshots."""
    for _ in range(steps):
        if rng.random() < 0.6 or not tree.second_generation_internals():
            leaf = int(rng.choice(tree.leaves()))
            g = int(rng.integers(len(graphs)))
            e = int(rng.integers(graphs[g].n_vertices))
            try:
                tree.apply_split(leaf, GraphSplitRule(g, e), graphs)
            except TreeError:
                pass
        else:
            tree.apply_merge(int(rng.choice(tree.second_generation_internals())))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_membership_matches_replay(seed, steps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    graphs = [random_arborescence(rng, int(rng.integers(2, 12)), n) for _ in range(3)]
    parents = [g.parent.copy() for g in graphs]
    vertex = [g.vertex_of.copy() for g in graphs]
    tree = DecisionTree(rng.random(n) < 0.8)
    _random_moves(rng, graphs, tree, steps)
    assert np.array_equal(tree.recompute_membership(graphs), tree.leaf_of)
    # leaves partition the samples
    got = np.sort(np.concatenate([tree.node(k).samples for k in tree.leaves()]))
    assert got.tolist() == list(range(n))
    # the candidate graphs are untouched by tree moves
    for g, p, v in zip(graphs, parents, vertex):
        assert np.array_equal(g.parent, p) and np.array_equal(g.vertex_of, v)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merge_undoes_split(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    graphs = [random_arborescence(rng, int(rng.integers(2, 12)), n) for _ in range(2)]
    tree = DecisionTree(np.ones(n, bool))
    _random_moves(rng, graphs, tree, 10)
    before = (tree.structure(), tree.leaf_of.copy(), sorted(tree.leaves()))
    for leaf in tree.leaves():
        for g, graph in enumerate(graphs):
            for e in range(graph.n_vertices):
                try:
                    tree.apply_split(leaf, GraphSplitRule(g, e), graphs)
                except TreeError:
                    continue
                tree.apply_merge(leaf)
                assert tree.structure() == before[0]
                assert np.array_equal(tree.leaf_of, before[1])
                assert sorted(tree.leaves()) == before[2]


def test_restore_and_compact():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    first = tuple(tree.leaves())
    right = tree.node(0).children[1]
    tree.apply_split(right, GraphSplitRule(0, 2), [g])
    second = tuple(tree.leaves())
    tree.restore(first)
    assert leaf_sets(tree) == [[0], [1, 2]]
    tree.restore(second)
    assert leaf_sets(tree) == [[0], [1], [2]]
    tree.restore((0,))
    assert tree.is_root_only() and tree.leaf_of.tolist() == [0, 0, 0]

    tree.restore(second)
    tree.apply_merge(right)
    c = tree.compact()
    assert len(c.nodes) == 3
    assert c.structure() == tree.structure()
    assert np.array_equal(c.recompute_membership([g]), c.leaf_of)


def test_restore_rejects_non_states():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    with pytest.raises(TreeError):
        tree.restore((1,))


def test_compact_tree_round_trip():
    rng = np.random.default_rng(3)
    graphs = [random_arborescence(rng, 8, 25) for _ in range(2)]
    tree = DecisionTree(np.ones(25, bool))
    _random_moves(rng, graphs, tree, 25)
    for k in tree.leaves():
        tree.node(k).leaf_weight = float(rng.standard_normal())
    ct = CompactTree.from_tree(tree)
    back = CompactTree.from_lines(ct.to_lines())
    assert back == ct
    np.testing.assert_array_equal(back.weight, ct.weight)
    vertex_of = [g.vertex_of for g in graphs]
    expect = tree.leaf_values(tree.leaf_of)
    np.testing.assert_array_equal(back.predict(vertex_of, graphs), expect)


def test_route_handles_new_samples():
    g = chain3()
    tree = DecisionTree(np.ones(3, bool))
    tree.apply_split(0, GraphSplitRule(0, 1), [g])
    new = g.with_samples([2, 0, 1, 1])
    leaves = tree.route([new.vertex_of], [new])
    l, r = tree.node(0).children
    assert leaves.tolist() == [r, l, r, r]


def test_vertex_groups_split_train_and_test():
    g = chain3()
    tree = DecisionTree(np.array([True, False, True]))
    groups = tree.vertex_groups(g)
    assert groups[(1, 0)] == (frozenset(), frozenset({1}))
    assert groups[(2, 0)] == (frozenset({2}), frozenset())


# --------------------------------------------------------- equivalent edges

def _types(graph, train_mask=None):
    n = graph.n_samples
    mask = np.ones(n, bool) if train_mask is None else train_mask
    z = np.zeros(n)
    table = GradientTable(z, -np.ones(n), z, z)
    vs = vertex_stats_from_labels(graph, np.zeros(n, int), mask, table, [0])
    tot = LeafStats(0.0, float(mask.sum()), int(mask.sum()))
    return recursive_split_scan(graph, vs, [tot], PriorConfig()).edge_type[:, 0]


def test_equivalent_set_without_redundant_ancestor():
    g = chain3()
    types = _types(g)
    assert equivalent_edge_set(g, types, 2) == [2]
    assert resolve_equivalent_edge(g, types, 2, seed=0) == 2


def test_equivalent_set_walks_redundant_ancestors():
    # 0 <- 1 <- 2 <- 3 <- 4 with samples on vertices 0 and 3 only; 5 hangs off 4, empty
    parent = [-1, 0, 1, 2, 3, 4]
    g = Arborescence(parent, [0, 0, 3, 3])
    types = _types(g)
    assert types.tolist() == [-1, 0, 0, 1, -1, -1]
    assert equivalent_edge_set(g, types, 3) == [3, 2, 1]
    draws = {resolve_equivalent_edge(g, types, 3, seed=s) for s in range(50)}
    assert draws == {1, 2, 3}
    rights = {tuple(g.bipartition(e)[1].tolist()) for e in (1, 2, 3)}
    assert len(rights) == 1


def test_equivalent_set_branching():
    # a branching vertex without samples keeps its edge valid when two children are non-empty
    parent = [-1, 0, 1, 1, 0]
    g = Arborescence(parent, [2, 3, 4, 0])
    types = _types(g)
    assert types[1] == 1  # children 2 and 3 both hold samples
    assert equivalent_edge_set(g, types, 1) == [1]


def test_equivalent_set_rejects_invalid_choice():
    g = chain3()
    types = _types(g)
    with pytest.raises(TreeError):
        equivalent_edge_set(g, types, 0)
