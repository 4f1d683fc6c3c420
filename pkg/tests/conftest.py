import numpy as np
import pytest

from casd.autodiff import Tape


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tape():
    return Tape()
