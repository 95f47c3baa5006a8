"""Built-in parameter sets for the two reproduced experiments."""

import math
from typing import Optional

from twolevel.models import TimeGrid, TwoLevelSystem, make_grid
from twolevel.morse import MorseModel
from twolevel.pulses import EnergyBudget

# Loss comparison: soliton against the matched square pulse
FIG1_MU = 1.0
FIG1_ENERGY = 2.0
FIG1_AREA = math.pi
FIG1_WINDOW = (-50.0, 50.0)
FIG1_NODES = 4001

# Terminal control of the Morse oscillator
FIG2_T_CONTROL = 30000.0
FIG2_NODES = 3001

MORSE_PARAMETERS = {
    "d0": 0.1994,
    "beta": 1.189,
    "r_star": 1.821,
    "mu0": 3.088,
    "r0": 0.6,
}


def fig1_system() -> TwoLevelSystem:
    return TwoLevelSystem(mu=FIG1_MU)


def fig1_budget() -> EnergyBudget:
    return EnergyBudget(e0=FIG1_ENERGY)


def fig1_grid() -> TimeGrid:
    return make_grid(FIG1_WINDOW[0], FIG1_WINDOW[1], FIG1_NODES)


def fig2_grid(t_control: float = FIG2_T_CONTROL, n: Optional[int] = None) -> TimeGrid:
    return make_grid(0.0, t_control, n or FIG2_NODES)


def morse_model(mass: float, **grid) -> MorseModel:
    """The fixed well and dipole parameters with a caller-supplied reduced mass."""
    return MorseModel(mass=mass, **MORSE_PARAMETERS, **grid)
