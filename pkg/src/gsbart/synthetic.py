"""Synthetic regression data with known mean functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, random_split
from .graphs import StructuralGraph

__all__ = ["SYNTH_KINDS", "SyntheticData", "friedman", "chain_step", "graph_step", "grid_graph",
           "generate_synthetic", "CHAIN_STEP_LEVELS", "CHAIN_STEP_JUMPS"]

SYNTH_KINDS = ("friedman", "chain-step", "graph-step")
CHAIN_STEP_JUMPS = (0.25, 0.5, 0.75)
CHAIN_STEP_LEVELS = (-1.5, -0.5, 0.5, 1.5)


@dataclass
class SyntheticData:
    """Features, noisy response and noiseless mean of a generated sample.

    ``graph`` and ``vertex`` are set for graph-step data: the structural
    graph and each row's vertex.
    """

    X: np.ndarray
    y: np.ndarray
    f: np.ndarray
    feature_names: list
    graph: StructuralGraph | None = None
    vertex: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dataset(self, test_fraction: float = 0.2, seed=0) -> Dataset:
        train = random_split(self.y.size, test_fraction, seed)
        columns = {"vertex": [str(v) for v in self.vertex]} if self.vertex is not None else {}
        return Dataset(self.y.copy(), self.X.copy(), list(self.feature_names), train, None, self.f.copy(), columns)

    def header_and_rows(self):
        header = list(self.feature_names) + (["vertex"] if self.vertex is not None else []) + ["y", "f"]
        rows = []
        for i in range(self.y.size):
            row = [float(v) for v in self.X[i]]
            if self.vertex is not None:
                row.append(int(self.vertex[i]))
            rows.append(row + [float(self.y[i]), float(self.f[i])])
        return header, rows


def _check(n, sigma):
    if n < 10:
        raise ValueError("n must be at least 10")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")


def friedman_mean(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return 10 * np.sin(math.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2 + 10 * X[:, 3]


def friedman(n: int, sigma: float = 1.0, seed=None) -> SyntheticData:
    """Five uniform covariates; the fifth is irrelevant."""
    _check(n, sigma)
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 5))
    f = friedman_mean(X)
    y = f + sigma * rng.standard_normal(n)
    return SyntheticData(X, y, f, [f"x{j + 1}" for j in range(5)])


def chain_step_mean(x, jumps=CHAIN_STEP_JUMPS, levels=CHAIN_STEP_LEVELS) -> np.ndarray:
    """Piecewise-constant function: ``levels[k]`` between consecutive jumps."""
    return np.asarray(levels, dtype=float)[np.searchsorted(np.asarray(jumps), np.asarray(x, float), side="right")]


def chain_step(n: int, sigma: float = 0.1, seed=None, n_features: int = 3,
               jumps=CHAIN_STEP_JUMPS, levels=CHAIN_STEP_LEVELS) -> SyntheticData:
    """Uniform features; only the first one drives the response, through a step function."""
    _check(n, sigma)
    if len(levels) != len(jumps) + 1:
        raise ValueError("need one more level than jumps")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, n_features))
    f = chain_step_mean(X[:, 0], jumps, levels)
    y = f + sigma * rng.standard_normal(n)
    return SyntheticData(X, y, f, [f"x{j + 1}" for j in range(n_features)])


def grid_graph(side: int) -> tuple[np.ndarray, np.ndarray]:
    """Edges of a ``side x side`` lattice and each vertex's (row, col)."""
    idx = np.arange(side * side).reshape(side, side)
    edges = np.concatenate([np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
                            np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])])
    rc = np.column_stack(np.divmod(np.arange(side * side), side))
    return edges, rc


def graph_step(n: int, sigma: float = 0.1, seed=None, side: int = 8, n_features: int = 2,
               levels=(-1.0, 0.0, 1.0)) -> SyntheticData:
    """Piecewise-constant function over connected regions of a lattice.

    The lattice is cut into an L-shaped region, the rest of the top half,
    and the bottom half; each region gets one level.  Rows sit on uniformly
    drawn vertices and carry ``n_features`` irrelevant uniform features.
    """
    _check(n, sigma)
    rng = np.random.default_rng(seed)
    edges, rc = grid_graph(side)
    half = side // 2
    region = np.where(rc[:, 0] >= half, 2, np.where((rc[:, 1] < half) | (rc[:, 0] == half - 1), 0, 1))
    vertex = rng.integers(side * side, size=n)
    f = np.asarray(levels, dtype=float)[region[vertex]]
    X = rng.uniform(size=(n, n_features))
    y = f + sigma * rng.standard_normal(n)
    g = StructuralGraph(side * side, edges, vertex, "lattice")
    return SyntheticData(X, y, f, [f"x{j + 1}" for j in range(n_features)], g, vertex, {"region": region})


def generate_synthetic(kind: str, n: int, sigma: float, seed=None) -> SyntheticData:
    if kind == "friedman":
        return friedman(n, sigma, seed)
    if kind == "chain-step":
        return chain_step(n, sigma, seed)
    if kind == "graph-step":
        return graph_step(n, sigma, seed)
    raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
