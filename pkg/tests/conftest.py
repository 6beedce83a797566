import numpy as np
import pytest

from ddfem.basis import compute_pod, split_port_basis
from ddfem.grid import ElementGrid
from ddfem.sampler import generate_poisson_patch_snapshots


@pytest.fixture(scope="session")
def grid8():
    return ElementGrid(8)


@pytest.fixture(scope="session")
def poisson_snaps8(grid8):
    # 40 sources -> 160 columns, more than the 81 element nodes
    return generate_poisson_patch_snapshots(40, grid8, seed=3)


@pytest.fixture(scope="session")
def split_full(poisson_snaps8):
    return split_port_basis(poisson_snaps8, epsilon=1.0)


@pytest.fixture(scope="session")
def mono_full(poisson_snaps8):
    return compute_pod(poisson_snaps8, epsilon=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
