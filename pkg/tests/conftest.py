import numpy as np
import pytest

from fnmiss.model import Dataset, Grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(rng, n=80, p=3, T=7, obs_rate=0.7):
    """Random dataset with an intercept column and roughly ``obs_rate`` observed."""
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    B = rng.normal(size=(p, T))
    Y = X @ B + rng.normal(scale=0.5, size=(n, T))
    Z = (rng.random(n) < obs_rate).astype(int)
    Z[: p + 2] = 1
    Z[-1] = 0
    return Dataset.from_arrays(X, Z, Y, Grid.equidistant(T))


@pytest.fixture
def small_ds(rng):
    return make_dataset(rng)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
