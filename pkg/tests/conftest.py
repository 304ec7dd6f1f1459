import os

import numpy as np
import pytest

os.environ.setdefault("FGOT_JOBS", "1")

ACCEPTANCE_LINES = []


def record(criterion, name: str, passed: bool, detail: str = ""):
    line = f"criterion {criterion:>2} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(rng, n, p=0.5, weighted=False):
    from fgot import Graph

    A = np.triu(rng.random((n, n)) < p, 1).astype(float)
    if weighted:
        A *= rng.uniform(0.5, 2.0, size=A.shape)
    return Graph(A + A.T)
