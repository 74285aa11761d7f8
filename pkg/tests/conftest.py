from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_interior_points(mesh, n, rng):
    """Uniform points inside random simplices of ``mesh``."""
    ids = rng.integers(0, mesh.n_simplices, size=n)
    lam = rng.dirichlet(np.ones(mesh.dim + 1), size=n)
    return np.einsum("nk,nkd->nd", lam, mesh.vertices[mesh.simplices[ids]])


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
