import numpy as np
import pytest

from lerayflow.field_core import Grid


@pytest.fixture
def grid16():
    return Grid(3, 16)


@pytest.fixture
def grid32():
    return Grid(3, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
