import numpy as np
import pytest

from dcrt.data import CovariateModel


def ar1_cov(p, rho=0.5):
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx))


def random_spd(rng, p, jitter=0.5):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + jitter * np.eye(p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ar1_model():
    return CovariateModel(np.zeros(10), ar1_cov(10), source="exact")


# one line per acceptance criterion, echoed after the run whatever the capture mode
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
