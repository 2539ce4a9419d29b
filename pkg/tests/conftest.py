import pytest

from mindisp.costs import squared_distance_cost
from mindisp.models import brownian_model, controlled_linear_model, frozen_model, theta_model
from mindisp.sde_core import NoiseStream, TimeGrid


@pytest.fixture
def noise():
    return NoiseStream(20240501)


@pytest.fixture
def unit_grid():
    """[0, 1] with 20 knots and 5 substeps each."""
    return TimeGrid.uniform(1.0, 20, 5)


@pytest.fixture
def long_grid():
    """[0, 6] at the benchmark resolution."""
    return TimeGrid.uniform(6.0, 20, 5)


@pytest.fixture
def brownian():
    return brownian_model(0.05)


@pytest.fixture
def linear():
    """dX = u dt + 0.3 dW from x_0 = 1."""
    return controlled_linear_model(0.0, 1.0, 0.3, initial_state=1.0)


@pytest.fixture
def frozen():
    return frozen_model(1, 1.0)


@pytest.fixture
def theta():
    return theta_model()


@pytest.fixture
def square():
    return squared_distance_cost([0.0])
