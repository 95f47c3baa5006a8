"""Control objectives evaluated on Bloch trajectories."""

from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter
from scipy.integrate import cumulative_trapezoid

from twolevel.errors import FitnessError
from twolevel.models import BlochTrajectory, TimeGrid


class IntegratedUpper(BaseModel):
    """Q22 = integral of rho22 dt over the whole grid; the loss to minimize."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["integrated_upper"] = "integrated_upper"

    @property
    def maximize(self) -> bool:
        return False

    def check(self, grid: TimeGrid) -> None:
        pass


class TerminalUpper(BaseModel):
    """rho22 at t_control; the target to maximize."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    kind: Literal["terminal_upper"] = "terminal_upper"
    t_control: float

    @property
    def maximize(self) -> bool:
        return True

    def check(self, grid: TimeGrid) -> None:
        if not grid.contains(self.t_control):
            raise FitnessError(
                f"t_control={self.t_control:g} lies outside [{grid.t0:g}, {grid.t1:g}]"
            )


FitnessSpec = Annotated[Union[IntegratedUpper, TerminalUpper], Field(discriminator="kind")]
fitness_adapter = TypeAdapter(FitnessSpec)


def occupation_weights(spec: FitnessSpec, grid: TimeGrid) -> np.ndarray:
    """c with fitness = sum(c * rho22 at the nodes)."""
    spec.check(grid)
    if isinstance(spec, IntegratedUpper):
        return grid.trapezoid_weights()
    c = np.zeros(grid.n)
    pos = (spec.t_control - grid.t0) / grid.dt
    i = min(int(np.floor(pos)), grid.n - 2)
    frac = pos - i
    c[i] = 1.0 - frac
    c[i + 1] = frac
    return c


def integrated_occupation_curve(traj: BlochTrajectory) -> np.ndarray:
    """Running integral of rho22 from the first node."""
    return cumulative_trapezoid(traj.rho22, traj.grid.times, initial=0.0)


def evaluate(spec: FitnessSpec, traj: BlochTrajectory) -> float:
    if isinstance(spec, IntegratedUpper):
        return float(integrated_occupation_curve(traj)[-1])
    return float(occupation_weights(spec, traj.grid) @ traj.rho22)
