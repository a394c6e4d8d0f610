import numpy as np
import pytest

from utils import tensor_core as tc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with tc.default_dtype(np.float64):
        yield


@pytest.fixture(autouse=True)
def clean_tape():
    # tests may switch the default dtype; put it back for the next one
    previous = tc.get_default_dtype()
    tc.reset_tape()
    yield
    tc.reset_tape()
    tc.set_default_dtype(previous)
