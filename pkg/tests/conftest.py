import warnings
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture(autouse=True)
def _quiet_sparcc():
    from sohpie.sparcc import SparccWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SparccWarning)
        yield


def lognormal_counts(rng, n, p, depth=5000, rho=None):
    """Multinomial counts from a log-normal basis with correlation `rho`."""
    cov = np.eye(p) if rho is None else rho
    z = rng.multivariate_normal(np.zeros(p), cov, size=n)
    w = np.exp(z + rng.normal(0, 1, size=p))
    prob = w / w.sum(axis=1, keepdims=True)
    return np.vstack([rng.multinomial(depth, row) for row in prob])


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
