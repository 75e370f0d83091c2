import numpy as np
import pytest

from snse.initial_data import random_solenoidal
from snse.spectral import Grid


@pytest.fixture
def grid2():
    return Grid(2, 16)


@pytest.fixture
def grid3():
    return Grid(3, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def field2(grid2, rng):
    return random_solenoidal(grid2, rng, slope=1.0)
