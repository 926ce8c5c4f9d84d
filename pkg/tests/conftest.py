import numpy as np
import pytest
import scipy.linalg as la


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260824)


def random_sl(rng, d, scale=1.0):
    """Random element of SL(d,R) with entries of moderate size."""
    g = rng.normal(scale=scale, size=(d, d))
    if la.det(g) < 0:
        g[:, [0, 1]] = g[:, [1, 0]]
    return g / la.det(g) ** (1.0 / d)


def random_rotation(rng, d):
    q, r = la.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if la.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
