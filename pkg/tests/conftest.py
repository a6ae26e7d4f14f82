import numpy as np
import pytest

from lagcns.fields import Grid, TimeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid1():
    return Grid((33,))


@pytest.fixture
def grid2():
    return Grid((17, 17))


def unit_time(nsteps=20, T=1.0):
    return TimeGrid(0.0, T, nsteps)
