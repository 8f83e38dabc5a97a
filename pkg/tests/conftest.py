import numpy as np
import pytest

from tride.synthetic import CorruptionSpec, GraphModel, make_instance
from tride.viewgraph import ViewGraph, enumerate_triangles


def random_unit(rng, size):
    z = rng.standard_normal((size, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def complete_graph(n, evidence=None):
    iu, ju = np.triu_indices(n, k=1)
    return ViewGraph(n, np.stack([iu, ju], axis=1), evidence)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def clean12():
    inst = make_instance(GraphModel("complete", 12), 80, CorruptionSpec(0.0), seed=3)
    return inst, enumerate_triangles(inst.graph)


@pytest.fixture(scope="session")
def corrupted12():
    inst = make_instance(GraphModel("complete", 12), 80, CorruptionSpec(0.3, 0.8), seed=4)
    return inst, enumerate_triangles(inst.graph)


# Acceptance results are echoed in the terminal summary so they survive
# output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
