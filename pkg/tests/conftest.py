import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_generator(rng, dim, scale=1.0):
    """Dense random generator with zero column sums."""
    P = rng.uniform(0, scale, (dim, dim))
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, -P.sum(axis=0))
    return P


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
