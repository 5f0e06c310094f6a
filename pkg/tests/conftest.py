import numpy as np
import pytest

from forecast_parareal.odecore import CallableSystem, LinearSystem


@pytest.fixture
def decay():
    """dx/dt = -x, x(0) = 1."""
    return LinearSystem([[-1.0]], [1.0])


@pytest.fixture
def still():
    """dx/dt = 0 in three dimensions."""
    return CallableSystem(lambda x, t: np.zeros(3), lambda x, t: np.zeros((3, 3)), [1.0, -2.0, 0.5])
