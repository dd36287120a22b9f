import numpy as np
import pytest

from cavtele.model import PhysicalParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_matrix(rng, n):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def random_state(rng, n):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


@pytest.fixture
def lossy():
    """(Delta; Omega; g; gamma; kappa_t; kappa_a)/2pi = (100; 10; 10; 1; 0.2; 0.05) MHz."""
    return PhysicalParams.from_mhz(100, 10, 10, gamma=1.0, kappa_t=0.2, kappa_a=0.05)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
