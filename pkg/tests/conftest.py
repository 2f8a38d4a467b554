import numpy as np
import pytest

from mtvcbf.margin_net import InputRange, init_params
from mtvcbf.vehicle_dynamics import VehicleParams


@pytest.fixture(scope="session")
def params():
    """Vehicle parameters of the simulation table"""
    return VehicleParams()


@pytest.fixture(scope="session")
def input_range(params):
    """Trained range of +/-3 wheelbases in x and y"""
    return InputRange.for_vehicle(params)


@pytest.fixture(scope="session")
def random_net(input_range):
    """Deterministic 3-62-62-1 network with non-zero output weights"""
    net = init_params(input_range, seed=7)
    rng = np.random.default_rng(11)
    net.weights[-1] = rng.normal(0.0, 0.3, size=net.weights[-1].shape)
    net.biases[-1] = np.array([0.05])
    return net
