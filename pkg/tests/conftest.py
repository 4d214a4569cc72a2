import numpy as np
import pytest

from genuq import oracles
from genuq.fields import Grid1D


@pytest.fixture(scope="session")
def grid16():
    return Grid1D(n=16, start=0.0, end=2 * np.pi, periodic=True)


@pytest.fixture(scope="session")
def grid64():
    return Grid1D(n=64, start=0.0, end=2 * np.pi, periodic=True)


@pytest.fixture(scope="session")
def dirichlet32():
    return Grid1D(n=32, start=-1.0, end=1.0, periodic=False)


@pytest.fixture(scope="session")
def elu_tiny(grid16):
    return oracles.make_elu_dataset(120, grid16, seed=5)


@pytest.fixture(scope="session")
def elliptic_tiny(dirichlet32):
    return oracles.make_elliptic_dataset(80, dirichlet32, seed=9)
