import numpy as np
import pytest
from hypothesis import settings

from sdnfuse import diffcore as dc
from sdnfuse import kernels

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per kernel backend."""
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture(autouse=True)
def _fresh_tape():
    dc.current_tape().reset()
    yield
    dc.current_tape().reset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
