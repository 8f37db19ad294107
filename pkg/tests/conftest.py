import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def testbed():
    """Scalar delay testbed (a, b, c, d)."""
    return (-1.0, 0.5, 0.2, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def testbed_spec(testbed):
    from sdepca.model import make_scalar_linear
    return make_scalar_linear(*testbed)
