"""
Shared fixtures for the test suite.

Author: noomesk
"""

import os
import tempfile

import numpy as np
import pytest

from src.battery import BatteryCellParams, BatteryPackParams, fit_battery_surrogate
from src.formulation import HorizonSpec, SystemModels
from src.fuelcell import DegradationRates, FcStackParams
from src.vehicle import PowerProfile


@pytest.fixture
def temp_csv():
    """Factory writing text to a temporary CSV file, removed after the test."""
    paths = []

    def write(content: str, suffix: str = ".csv") -> str:
        with tempfile.NamedTemporaryFile(mode='w', suffix=suffix, delete=False, encoding='utf-8') as f:
            f.write(content)
            paths.append(f.name)
        return f.name

    yield write
    for path in paths:
        if os.path.exists(path):
            os.unlink(path)


@pytest.fixture(scope="session")
def cell():
    return BatteryCellParams()


@pytest.fixture(scope="session")
def surrogate(cell):
    return fit_battery_surrogate(cell)


def make_models(surrogate, n_stacks: int = 1, **stack_overrides) -> SystemModels:
    return SystemModels(
        cell=BatteryCellParams(),
        pack=BatteryPackParams(),
        surrogate=surrogate,
        stacks=(FcStackParams(**stack_overrides),) * n_stacks,
        rates=DegradationRates(),
    )


@pytest.fixture(scope="session")
def models_1(surrogate):
    return make_models(surrogate, 1)


@pytest.fixture(scope="session")
def models_2(surrogate):
    return make_models(surrogate, 2)


def make_horizon(n_steps: int, n_stacks: int, mode: str = "isc", dt: float = 10.0, **kwargs) -> HorizonSpec:
    """Short horizon with a wide terminal window unless told otherwise."""
    settings = {"soc_final_min": 30.0, "soc_final_max": 70.0}
    settings.update(kwargs)
    return HorizonSpec(n_steps=n_steps, dt=dt, n_stacks=n_stacks, mode=mode, **settings)


def random_profile(rng: np.random.Generator, n_steps: int, n_stacks: int, dt: float = 10.0) -> PowerProfile:
    """Demand the stacks and battery can always serve together."""
    demand = rng.uniform(-20.0, 50.0 * n_stacks, size=n_steps)
    return PowerProfile(dt, demand)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks (deselect with -m 'not slow')")
