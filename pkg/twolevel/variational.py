"""Euler-Lagrange problems for the pulse area.

For the integrated loss the reduced Lagrangian sin^2(theta) + lam * theta'^2 / mu^2
gives the pendulum equation 2 lam theta'' = mu^2 sin(2 theta), whose heteroclinic
solution is the sech soliton. For the terminal objective the optimal area grows
linearly in time.

Shooting integrates the first integral theta'^2 = s^2 + (mu^2 / lam) sin^2(theta),
with s the slope at the left boundary. theta is then strictly increasing and
theta(t1) is monotone in s, so plain bisection on s converges.
"""

import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from twolevel.errors import ShootingError
from twolevel.models import TimeGrid, TwoLevelSystem, make_grid
from twolevel.pulses import AreaProfile, EnergyBudget, Sampled

logger = logging.getLogger(__name__)

SHOOTING_TOL = 1e-9


def _is_pi_multiple(x: float) -> bool:
    n = round(x / math.pi)
    return n >= 0 and abs(x - n * math.pi) <= 1e-9 * max(1.0, abs(x))


class VariationalProblem(BaseModel):
    """Pendulum boundary-value problem on a finite window standing in for the real line."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, populate_by_name=True)

    sys: TwoLevelSystem
    lam: float = Field(alias="lambda")
    window: TimeGrid
    bc: tuple[float, float] = (0.0, math.pi)

    @field_validator("lam")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("lambda must be > 0")
        return v

    @model_validator(mode="after")
    def _check_bc(self) -> "VariationalProblem":
        left, right = self.bc
        if not (_is_pi_multiple(left) and _is_pi_multiple(right - left)):
            raise ValueError("boundary areas must be non-negative multiples of pi with right >= left")
        return self

    @property
    def width(self) -> float:
        return math.sqrt(self.lam) / self.sys.mu

    @property
    def order(self) -> int:
        return round((self.bc[1] - self.bc[0]) / math.pi)


def lambda_from_energy(sys: TwoLevelSystem, budget: EnergyBudget) -> float:
    """Multiplier giving the fundamental soliton energy E0: lam = 4 / (mu E0)^2."""
    return 4.0 / (sys.mu * budget.e0) ** 2


def el_residual(theta: AreaProfile, prob: VariationalProblem) -> np.ndarray:
    """2 lam theta'' - mu^2 sin(2 theta) at the interior nodes.

    theta'' uses the five-point fourth-order stencil, falling back to three
    points next to the boundary.
    """
    grid = prob.window
    if theta.grid != grid:
        raise ValueError("area profile is not defined on the problem window")
    th = theta.theta
    h2 = grid.dt**2
    second = (th[:-2] - 2.0 * th[1:-1] + th[2:]) / h2
    if grid.n >= 5:
        second[1:-1] = (
            -th[:-4] + 16.0 * th[1:-3] - 30.0 * th[2:-2] + 16.0 * th[3:-1] - th[4:]
        ) / (12.0 * h2)
    return 2.0 * prob.lam * second - prob.sys.mu**2 * np.sin(2.0 * th[1:-1])


def _integrate(
    theta: float, s2: float, c2: float, h: float, steps: int, ceiling: Optional[float] = None
) -> list[float]:
    """RK4 for theta' = sqrt(s2 + c2 sin^2 theta); stops early once theta exceeds ceiling."""
    thetas = [theta]
    half = 0.5 * h
    sin = math.sin
    sqrt = math.sqrt

    def f(th: float) -> float:
        sn = sin(th)
        return sqrt(s2 + c2 * sn * sn)

    for _ in range(steps):
        k1 = f(theta)
        k2 = f(theta + half * k1)
        k3 = f(theta + half * k2)
        k4 = f(theta + h * k3)
        theta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        thetas.append(theta)
        if ceiling is not None and theta > ceiling:
            break
    return thetas


def _crossing(times: np.ndarray, theta: np.ndarray, level: float) -> float:
    above = np.nonzero(theta >= level)[0]
    if above.size == 0:
        raise ValueError("area profile never reaches its mid level")
    i = int(above[0])
    if i == 0:
        return float(times[0])
    frac = (level - theta[i - 1]) / (theta[i] - theta[i - 1])
    return float(times[i - 1] + frac * (times[i] - times[i - 1]))


def area_center(profile: AreaProfile) -> float:
    """Time at which theta first reaches (theta_left + theta_right) / 2."""
    th = profile.theta
    if th[-1] == th[0]:
        raise ValueError("flat area profile has no centre")
    return _crossing(profile.grid.times, th, 0.5 * (th[0] + th[-1]))


def solve_pendulum_bvp(prob: VariationalProblem) -> AreaProfile:
    """Shooting on the initial slope, bisected until theta(t1) hits the right boundary area.

    The solution is defined up to a time shift; it is returned with its area
    centre moved to the node nearest the window midpoint.
    """
    grid = prob.window
    mu = prob.sys.mu
    left, right = prob.bc
    if right == left:
        return AreaProfile(grid=grid, theta=np.full(grid.n, left), rate=np.zeros(grid.n))
    if grid.duration < 20.0 * prob.width:
        raise ShootingError(
            f"window of length {grid.duration:g} is narrower than 20 soliton widths ({20 * prob.width:g})"
        )

    # phi = theta - left: sin^2 is pi-periodic and phi starts at an exact zero
    span = right - left
    c2 = mu**2 / prob.lam
    steps = grid.n - 1
    h = grid.dt

    def shoot(slope: float) -> float:
        return _integrate(0.0, slope * slope, c2, h, steps, ceiling=span + 1.0)[-1]

    lo, hi = 0.0, 2.0 * prob.order * mu / math.sqrt(prob.lam)
    if shoot(hi) < span:
        raise ShootingError(f"slope bracket (0, {hi:g}] does not reach theta={right:g}")

    best, best_err = hi, math.inf
    for it in range(400):
        if lo == 0.0 or hi / lo > 2.0:
            mid = math.sqrt(hi * (hi * 1e-300 if lo == 0.0 else lo))
        else:
            mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        end = shoot(mid)
        err = abs(end - span)
        logger.debug(f"bisection {it}: slope={mid:.6e} theta(t1)={left + end:.12f}")
        if err < best_err:
            best, best_err = mid, err
        if err <= SHOOTING_TOL:
            break
        if end < span:
            lo = mid
        else:
            hi = mid
    if best_err > SHOOTING_TOL:
        raise ShootingError(f"shooting stalled with |theta(t1) - {right:g}| = {best_err:.3e}")

    s2 = best * best
    phis = _integrate(0.0, s2, c2, h, steps)
    centre = _crossing(grid.times, np.array(phis), 0.5 * span)
    shift = round((centre - 0.5 * (grid.t0 + grid.t1)) / h)
    if shift > 0:
        phis = phis[shift:] + _integrate(phis[-1], s2, c2, h, shift)[1:]
    elif shift < 0:
        phis = _integrate(0.0, s2, c2, -h, -shift)[:0:-1] + phis[: grid.n + shift]
    phi = np.array(phis)
    rate = np.sqrt(s2 + c2 * np.sin(phi) ** 2)
    logger.info(f"pendulum BVP solved: slope={best:.6e}, recentred by {shift} nodes")
    return AreaProfile(grid=grid, theta=left + phi, rate=rate)


def solve_delta_case(sys: TwoLevelSystem, t_control: float, n: int = 1001) -> AreaProfile:
    """Linear area theta = (pi/2) t / t_control on [0, t_control]."""
    if not t_control > 0:
        raise ValueError("t_control must be > 0")
    grid = make_grid(0.0, t_control, n)
    slope = math.pi / (2.0 * t_control)
    return AreaProfile(grid=grid, theta=slope * grid.times, rate=np.full(n, slope))


def envelope_from_profile(profile: AreaProfile, sys: TwoLevelSystem) -> Sampled:
    """V = theta' / mu, from the stored rate or by differencing theta."""
    rate = profile.rate
    if rate is None:
        rate = np.gradient(profile.theta, profile.grid.dt)
    return Sampled(grid=profile.grid, values=rate / sys.mu)
