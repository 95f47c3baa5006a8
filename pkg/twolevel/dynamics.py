"""RWA Liouville dynamics of the driven two-level system.

State vector x = (rho11, rho22, re12, im12). With the coherence convention in
which im12 = sin(2 theta)/2 for an undamped resonant pulse:

    d rho11/dt = -2 mu V im12 + gamma1 rho22
    d rho22/dt =  2 mu V im12 - gamma1 rho22
    d re12/dt  = -gamma2 re12
    d im12/dt  =  mu V (rho11 - rho22) - gamma2 im12

The right-hand side is A(V) x with A(V) = A0 + V B, so one classical RK4 substep
is a 4x4 matrix. The optimizer differentiates exactly this discrete map.
"""

import logging
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from twolevel.errors import EnvelopeError, IntegrationError
from twolevel.models import BlochState, BlochTrajectory, TimeGrid, TwoLevelSystem, ground_state
from twolevel.pulses import Sampled, _Envelope, pulse_area

logger = logging.getLogger(__name__)


class IntegratorConfig(BaseModel):
    """Fixed-step RK4 settings: each grid interval is split into substeps of at most dt_max."""

    model_config = ConfigDict(frozen=True)

    method: Literal["rk4"] = "rk4"
    dt_max: float = math.inf
    substeps: int = 4

    @field_validator("dt_max")
    @classmethod
    def _positive_step(cls, v: float) -> float:
        if math.isnan(v) or v <= 0:
            raise ValueError("dt_max must be > 0")
        return v

    @field_validator("substeps")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError("substeps must be >= 1")
        return v

    def substeps_for(self, grid: TimeGrid) -> int:
        return max(self.substeps, math.ceil(grid.dt / self.dt_max))


def generator_parts(sys: TwoLevelSystem) -> tuple[np.ndarray, np.ndarray]:
    """(A0, B) with A(V) = A0 + V B."""
    g1, g2 = sys.gamma1, sys.gamma2
    a0 = np.array(
        [
            [0.0, g1, 0.0, 0.0],
            [0.0, -g1, 0.0, 0.0],
            [0.0, 0.0, -g2, 0.0],
            [0.0, 0.0, 0.0, -g2],
        ]
    )
    b = sys.mu * np.array(
        [
            [0.0, 0.0, 0.0, -2.0],
            [0.0, 0.0, 0.0, 2.0],
            [0.0, 0.0, 0.0, 0.0],
            [1.0, -1.0, 0.0, 0.0],
        ]
    )
    return a0, b


class StepSchedule:
    """Substep layout over a grid.

    Every grid interval gets `substeps` equal pieces; envelope discontinuities
    become extra substep edges so no RK4 stage straddles a jump.
    """

    def __init__(self, grid: TimeGrid, cfg: IntegratorConfig, breakpoints=()):
        m = cfg.substeps_for(grid)
        times = grid.times
        k = np.repeat(np.arange(grid.n - 1), m)
        j = np.tile(np.arange(m), grid.n - 1).astype(float)
        starts = times[k] + (j / m) * grid.dt
        ends = np.where(j == m - 1, times[k + 1], times[k] + ((j + 1) / m) * grid.dt)
        frac_lo = j / m
        frac_hi = (j + 1) / m

        for b in sorted(breakpoints):
            hit = np.nonzero((starts < b) & (b < ends))[0]
            if hit.size == 0:
                continue
            i = int(hit[0])
            f = (b - times[k[i]]) / grid.dt
            starts = np.insert(starts, i + 1, b)
            ends = np.insert(ends, i, b)
            k = np.insert(k, i + 1, k[i])
            frac_lo = np.insert(frac_lo, i + 1, f)
            frac_hi = np.insert(frac_hi, i, f)

        self.grid = grid
        self.starts = starts
        self.ends = ends
        self.interval = k
        self.frac_lo = frac_lo
        self.frac_hi = frac_hi
        self.h = ends - starts
        counts = np.bincount(k, minlength=grid.n - 1)
        # position of grid node i in the substep-state array
        self.node_index = np.concatenate([[0], np.cumsum(counts)])

    def __len__(self) -> int:
        return self.h.shape[0]

    def time_of_state(self, i: int) -> float:
        return float(self.grid.t0 if i == 0 else self.ends[i - 1])


def stage_values(env: _Envelope, schedule: StepSchedule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Envelope at the start, midpoint and end of every substep.

    Endpoints are one-sided limits from inside the substep. A Sampled envelope
    on the schedule's own grid is interpolated with the exact hat weights.
    """
    if isinstance(env, Sampled) and env.grid == schedule.grid:
        lo = env.values[schedule.interval]
        slope = env.values[schedule.interval + 1] - lo
        mid = 0.5 * (schedule.frac_lo + schedule.frac_hi)
        return lo + schedule.frac_lo * slope, lo + mid * slope, lo + schedule.frac_hi * slope
    v1 = env.evaluate(np.nextafter(schedule.starts, np.inf))
    v2 = env.evaluate(0.5 * (schedule.starts + schedule.ends))
    v4 = env.evaluate(np.nextafter(schedule.ends, -np.inf))
    for v in (v1, v2, v4):
        if not np.all(np.isfinite(v)):
            raise EnvelopeError("envelope has non-finite samples")
    return v1, v2, v4


def _stack(a0: np.ndarray, b: np.ndarray, v: np.ndarray) -> np.ndarray:
    return a0[None, :, :] + v[:, None, None] * b[None, :, :]


def cumulative_products(mats: np.ndarray) -> np.ndarray:
    """out[i] = mats[i] @ mats[i - 1] @ ... @ mats[0], by log2(n) doubling passes."""
    out = np.array(mats, dtype=float)
    shift = 1
    while shift < out.shape[0]:
        out[shift:] = out[shift:] @ out[:-shift]
        shift *= 2
    return out


class Propagation:
    """A full forward RK4 pass, substep states included."""

    def __init__(
        self,
        sys: TwoLevelSystem,
        env: _Envelope,
        grid: TimeGrid,
        init: BlochState,
        cfg: IntegratorConfig,
        schedule: Optional[StepSchedule] = None,
    ):
        self.sys = sys
        self.grid = grid
        self.schedule = schedule or StepSchedule(grid, cfg, env.breakpoints())
        self.a0, self.b = generator_parts(sys)
        self.v1, self.v2, self.v4 = stage_values(env, self.schedule)

        h = self.schedule.h[:, None, None]
        self.a1 = _stack(self.a0, self.b, self.v1)
        self.a2 = _stack(self.a0, self.b, self.v2)
        self.a4 = _stack(self.a0, self.b, self.v4)
        a2a1 = self.a2 @ self.a1
        a2a2 = self.a2 @ self.a2
        a4a2 = self.a4 @ self.a2
        a2a2a1 = self.a2 @ a2a1
        a4a2a2 = self.a4 @ a2a2
        a4a2a2a1 = self.a4 @ a2a2a1
        self.phi = np.eye(4)[None, :, :] + h / 6.0 * (
            self.a1
            + 4.0 * self.a2
            + self.a4
            + h * (a2a1 + a2a2 + a4a2)
            + 0.5 * h**2 * (a2a2a1 + a4a2a2)
            + 0.25 * h**3 * a4a2a2a1
        )

        x = np.empty((len(self.schedule) + 1, 4))
        x[0] = init.as_array()
        x[1:] = cumulative_products(self.phi) @ x[0]
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise IntegrationError(self.schedule.time_of_state(i), "non-finite state")
        self.substep_states = x

    @property
    def node_states(self) -> np.ndarray:
        return self.substep_states[self.schedule.node_index]

    def trajectory(self) -> BlochTrajectory:
        return BlochTrajectory(grid=self.grid, states=self.node_states)


def propagate(
    sys: TwoLevelSystem,
    env: _Envelope,
    grid: TimeGrid,
    init: Optional[BlochState] = None,
    cfg: Optional[IntegratorConfig] = None,
) -> BlochTrajectory:
    """Integrate the RWA equations from init, recording the state at every grid node."""
    init = init or ground_state()
    cfg = cfg or IntegratorConfig()
    if not sys.preserves_positivity():
        logger.warning(
            f"gamma2={sys.gamma2:g} < gamma1/2={0.5 * sys.gamma1:g}: positivity is not guaranteed"
        )
    if not init.is_physical():
        logger.warning(f"initial state {init.as_array()} is not a physical density matrix")
    run = Propagation(sys, env, grid, init, cfg)
    logger.debug(f"propagated {len(run.schedule)} substeps over [{grid.t0:g}, {grid.t1:g}]")
    return run.trajectory()


def analytic_rho22(env: _Envelope, sys: TwoLevelSystem, grid: TimeGrid) -> np.ndarray:
    """sin^2 of the pulse area; exact for gamma1 = gamma2 = 0 starting in the ground state."""
    return np.sin(pulse_area(env, sys, grid).theta) ** 2


def adiabaticity_ratio(env: _Envelope, sys: TwoLevelSystem, grid: TimeGrid) -> float:
    """max |dV/dt * omega| / |V|^3 over interior nodes where |V| > 1e-3 of its peak."""
    v = env.evaluate(grid.times)
    if not np.all(np.isfinite(v)):
        raise EnvelopeError("envelope has non-finite samples")
    peak = float(np.max(np.abs(v)))
    if peak == 0.0:
        raise EnvelopeError("adiabaticity ratio of an all-zero envelope is undefined")
    vdot = (v[2:] - v[:-2]) / (2.0 * grid.dt)
    inner = v[1:-1]
    mask = np.abs(inner) > 1e-3 * peak
    if not mask.any():
        return 0.0
    ratio = float(np.max(np.abs(vdot[mask] * sys.omega) / np.abs(inner[mask]) ** 3))
    if ratio >= 1.0:
        logger.warning(f"adiabaticity ratio {ratio:.3g} >= 1, the RWA is not trustworthy here")
    return ratio


def trace_drift(traj: BlochTrajectory) -> float:
    """Largest deviation of rho11 + rho22 from 1 along the trajectory."""
    return float(np.max(np.abs(traj.rho11 + traj.rho22 - 1.0)))


def min_eigenvalue(traj: BlochTrajectory) -> float:
    """Smallest eigenvalue of the reconstructed 2x2 density matrix along the trajectory."""
    s = traj.states
    split = np.hypot(s[:, 0] - s[:, 1], 2.0 * np.hypot(s[:, 2], s[:, 3]))
    return float(np.min(0.5 * (s[:, 0] + s[:, 1] - split)))
