import numpy as np
import pytest


def random_spd(rng, d, cond=10.0):
    """Random SPD matrix with eigenvalues spread over ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    X = (Q * w) @ Q.T
    return 0.5 * (X + X.T)


def random_sym(rng, d):
    A = rng.standard_normal((d, d))
    return 0.5 * (A + A.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
