import numpy as np
import pytest

from gsbart.graphs import Arborescence

ACCEPTANCE_LINES: list[str] = []


def random_arborescence(rng, n_vertices, n_samples, label="g"):
    """Random rooted tree: each vertex (in a shuffled order) hangs below an earlier one."""
    perm = rng.permutation(n_vertices)
    parent = np.full(n_vertices, -1)
    for k in range(1, n_vertices):
        parent[perm[k]] = perm[rng.integers(k)]
    return Arborescence(parent, rng.integers(n_vertices, size=n_samples), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
