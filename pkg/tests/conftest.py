import numpy as np
import pytest

from specbench.graph import Graph, generate_graph


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    """Erdos-Renyi sample plus a random spanning path so no node is isolated."""
    upper = np.triu(rng.random((n, n)) < p, 1)
    perm = rng.permutation(n)
    upper[np.minimum(perm[:-1], perm[1:]), np.maximum(perm[:-1], perm[1:])] = True
    i, j = np.nonzero(upper)
    return Graph(n, np.stack([i, j], axis=1))


@pytest.fixture
def path3():
    return generate_graph("path", {"n": 3})


@pytest.fixture
def edge2():
    return Graph(2, [(0, 1)])


@pytest.fixture
def small_sbm():
    return generate_graph("sbm", {"sizes": [20, 20, 20], "p_in": 0.3, "p_out": 0.03}, seed=3)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number} [{name}]: {'PASS' if passed else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
