import numpy as np
import pytest

from certdg import netcore
from certdg.netcore import Layer, ModelParams


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function over every entry of ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def random_head(rng, C=2, m=2, scale=1.0):
    return rng.normal(size=(C, m)) * scale, rng.normal(size=C) * 0.3


def random_params(rng, d=3, hidden=(5, 4), m=2, C=3):
    return netcore.init_params(d, C, hidden, m, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def binary_head():
    return np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2)


@pytest.fixture
def identity_params():
    return ModelParams([Layer(np.eye(2), np.zeros(2), "identity")], np.array([[1.0, 0.0], [-1.0, 0.0]]),
                       np.zeros(2))
