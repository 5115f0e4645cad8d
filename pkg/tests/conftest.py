import numpy as np
import pytest


def random_spd(rng, dim, scale=1.0):
    """Random symmetric positive definite matrix with condition kept sane."""
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def random_psd_deficient(rng, dim, rank):
    a = rng.standard_normal((dim, rank))
    return a @ a.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
