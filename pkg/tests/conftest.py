import numpy as np
import pytest
from hypothesis import strategies as st

from panda.graph import Graph


def random_graph(rng, n, p=0.4, connected=True):
    """Erdos-Renyi graph; with ``connected`` a random spanning tree is added first."""
    edges = []
    if connected and n > 1:
        order = rng.permutation(n)
        for i in range(1, n):
            edges.append((int(order[i]), int(order[rng.integers(0, i)])))
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                edges.append((u, v))
    return Graph.from_edges(n, edges)


@st.composite
def graphs(draw, min_nodes=1, max_nodes=9, connected=False):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    if connected:
        chosen = chosen + [(i - 1, i) for i in range(1, n)]
    return Graph.from_edges(n, chosen)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def cycle4():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    """Record one acceptance verdict; the lines are repeated in the run summary."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
