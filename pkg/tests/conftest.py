import numpy as np
import pytest

from itepred.tabular import Dataset


def random_trial(n, p, seed=0, beta=None, bt=-0.5, bz=None):
    """Logistic trial data with a known outcome model."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    a = rng.integers(0, 2, n)
    beta = 0.5 * np.ones(p) if beta is None else np.asarray(beta)
    bz = np.zeros(p) if bz is None else np.asarray(bz)
    eta = -0.5 + bt * a + X @ beta + a * (X @ bz)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
    return Dataset(X, a, y, tuple(f"x{j + 1}" for j in range(p)))


@pytest.fixture
def trial():
    return random_trial(300, 4, seed=11)
