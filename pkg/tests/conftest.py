import numpy as np
import pytest

from levygreen.geometry import Ball, Box, Interval
from levygreen.models import (relativistic_model, stable_model,
                              truncated_model)


@pytest.fixture(scope="session")
def disk():
    return Ball(center=(0.0, 0.0), radius=1.0)


@pytest.fixture(scope="session")
def interval():
    return Interval(-1.0, 1.0)


@pytest.fixture(scope="session")
def square():
    return Box(lo=(0.0, 0.0), hi=(1.0, 1.0))


@pytest.fixture(scope="session")
def stable2d():
    return stable_model(2, 1.5)


@pytest.fixture(scope="session")
def rel1d():
    return relativistic_model(1, 1.2, 1.0)


@pytest.fixture(scope="session")
def trunc1d():
    return truncated_model(1, 1.2, 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
