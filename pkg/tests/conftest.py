import numpy as np
import pytest

from secureagg import ring


@pytest.fixture(scope="session")
def small_params():
    """Tiny two-prime ring for exhaustive/oracle tests: q = 17 * 97 = 1649."""
    return ring.RingParams(n=8, primes=(17, 97), t=16)


@pytest.fixture(scope="session")
def default_params():
    return ring.default_ring_params()


@pytest.fixture(scope="session")
def default_crs(default_params):
    rng = np.random.default_rng(987654321)
    return ring.sample_uniform(default_params, rng).to_ntt()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
