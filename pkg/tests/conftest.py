import numpy as np
import pytest

from vrjpiso.graph import AugmentedGraph, WeightedGraph, pair, path3, single_vertex, triangle

# acceptance lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def corpus_graphs():
    """Named plain graphs plus a few irregular ones."""
    star = WeightedGraph.from_edges(4, [(0, 1, 1.0), (0, 2, 3.0), (0, 3, 0.5)], name="star")
    k4 = WeightedGraph.from_edges(4, [(i, j, 1.0 + 0.25 * (i + j)) for i in range(4) for j in range(i + 1, 4)],
                                  name="k4")
    c5 = WeightedGraph.from_edges(5, [(i, (i + 1) % 5, 1.0 + 0.1 * i) for i in range(5)], name="cycle5")
    wheel = WeightedGraph.from_edges(6, [(0, i, 0.7 * i) for i in range(1, 6)]
                                     + [(i, i % 5 + 1, 1.3) for i in range(1, 6)], name="wheel6")
    return [single_vertex(), pair(2.0), path3(), triangle(), star, k4, c5, wheel]
