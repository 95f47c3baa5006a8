import os

# Pin numerics and logging for all tests, regardless of .env settings.
# This must be set before any twolevel module is imported so that config.py reads it
# before load_dotenv() runs (load_dotenv skips vars already in os.environ).
os.environ["TWOLEVEL_LOG_LEVEL"] = "WARNING"
os.environ["TWOLEVEL_SUBSTEPS"] = "4"
os.environ["TWOLEVEL_MORSE_NR"] = "4096"
os.environ["TWOLEVEL_OUT_DIR"] = "out"

import pytest

from twolevel import presets
from twolevel.models import TwoLevelSystem, make_grid
from twolevel.pulses import EnergyBudget

# Reduced mass of OH in electron masses, used wherever a Morse mass is needed
OH_MASS = 1728.539


@pytest.fixture
def unit_system():
    return TwoLevelSystem(mu=1.0)


@pytest.fixture
def budget_two():
    return EnergyBudget(e0=2.0)


@pytest.fixture
def wide_grid():
    return make_grid(-50.0, 50.0, 4001)


@pytest.fixture(scope="session")
def oh_model():
    return presets.morse_model(OH_MASS)
