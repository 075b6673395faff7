import numpy as np
import pytest

from formjoin.formation import NominalFormation, Rotation
from formjoin.laplacian import BlockLaplacian

NOMINAL = {1: [-3, 3], 2: [3, 2], 3: [2, 0], 4: [1, -1], 5: [0, -2], 6: [-2, -3]}
P7 = [-1.0, -2.1]
P8 = [-1.0, 1.0]

# off-diagonal blocks of the six-agent Laplacian (diagonal matrices, given as their diagonals)
SIX_AGENT_EDGES = {(1, 2): [5, -6], (2, 3): [-30, -3], (3, 4): [-30, -6], (4, 5): [-30, -6], (5, 6): [-15, -6], (1, 6): [-30, 1]}

ACCEPTANCE_LINES = []


def six_agent_laplacian() -> BlockLaplacian:
    return BlockLaplacian(2, tuple(NOMINAL), {k: np.diag(v) for k, v in SIX_AGENT_EDGES.items()})


@pytest.fixture
def F6():
    return NominalFormation.from_mapping(NOMINAL, Rotation.identity(2), {1, 2})


@pytest.fixture
def L6():
    return six_agent_laplacian()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_line():
    def record(name: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
