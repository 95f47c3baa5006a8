"""Pulse envelopes V(t), the analytic optimal shapes, and the area/energy functionals.

Analytic variants carry closed-form antiderivatives, so pulse_area and pulse_energy
are exact for them on any window. Sampled envelopes are the linear interpolant of
their node values; the trapezoidal rule gives the exact area of that interpolant and
an O(dt^2) approximation of its energy, which is the discrete energy every Sampled
operation (energy_scaled, the optimizer constraint) holds fixed.
"""

import logging
import math
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator
from scipy.integrate import cumulative_trapezoid, trapezoid

from twolevel.errors import EnvelopeError
from twolevel.models import TimeGrid, TwoLevelSystem, _frozen_array

logger = logging.getLogger(__name__)

# Finite-grid operations window the soliton at +-SOLITON_CUTOFF widths.
SOLITON_CUTOFF = 12.0


def _sech(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return 2.0 * e / (1.0 + e * e)


def _gudermannian_half(x: np.ndarray) -> np.ndarray:
    """arctan(exp(x)) - pi/4, without overflow."""
    return np.arctan(np.tanh(0.5 * x))


class _Envelope(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False, arbitrary_types_allowed=True)

    def evaluate(self, t) -> np.ndarray:
        raise NotImplementedError

    def antiderivative(self, t) -> np.ndarray:
        """Primitive of V, up to a constant."""
        raise NotImplementedError

    def energy_between(self, a: float, b: float) -> float:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Times where V is discontinuous."""
        return ()


class Soliton(_Envelope):
    """V(t) = order / (sqrt(lam) cosh(t mu / sqrt(lam))): area order*pi, peak at t = 0."""

    kind: Literal["soliton"] = "soliton"
    order: int = 1
    lam: float
    mu: float

    @field_validator("order")
    @classmethod
    def _order(cls, v: int) -> int:
        if v < 1:
            raise ValueError("soliton order must be >= 1")
        return v

    @field_validator("lam", "mu")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @property
    def width(self) -> float:
        """tau = sqrt(lam) / mu."""
        return math.sqrt(self.lam) / self.mu

    @property
    def peak(self) -> float:
        return self.order / math.sqrt(self.lam)

    @property
    def support(self) -> tuple[float, float]:
        return (-SOLITON_CUTOFF * self.width, SOLITON_CUTOFF * self.width)

    def evaluate(self, t) -> np.ndarray:
        return self.peak * _sech(np.asarray(t, dtype=float) / self.width)

    def antiderivative(self, t) -> np.ndarray:
        x = np.asarray(t, dtype=float) / self.width
        return 2.0 * self.peak * self.width * _gudermannian_half(x)

    def energy_between(self, a: float, b: float) -> float:
        tau = self.width
        return self.peak**2 * tau * (math.tanh(b / tau) - math.tanh(a / tau))


class _Box(_Envelope):
    amplitude: float
    start: float
    stop: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.stop > self.start:
            raise ValueError("stop must be greater than start")
        return self

    @property
    def duration(self) -> float:
        return self.stop - self.start

    @property
    def support(self) -> tuple[float, float]:
        return (self.start, self.stop)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.start) & (t <= self.stop), self.amplitude, 0.0)

    def antiderivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.amplitude * (np.clip(t, self.start, self.stop) - self.start)

    def energy_between(self, a: float, b: float) -> float:
        overlap = max(0.0, min(b, self.stop) - max(a, self.start))
        return self.amplitude**2 * overlap

    def breakpoints(self) -> tuple[float, ...]:
        return (self.start, self.stop)


class Square(_Box):
    """Rectangular comparison pulse."""

    kind: Literal["square"] = "square"


class Constant(_Box):
    """Time-independent amplitude on [start, stop]; the minimal-energy pi/2 pulse."""

    kind: Literal["constant"] = "constant"


class Sampled(_Envelope):
    """Envelope given by its values on a grid, linearly interpolated, zero outside."""

    kind: Literal["sampled"] = "sampled"
    grid: TimeGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = _frozen_array(v, ndim=1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("sampled values must be finite")
        return arr

    @model_validator(mode="after")
    def _check_length(self) -> "Sampled":
        if self.values.shape[0] != self.grid.n:
            raise ValueError(f"expected {self.grid.n} values, got {self.values.shape[0]}")
        return self

    @property
    def support(self) -> tuple[float, float]:
        return (self.grid.t0, self.grid.t1)

    def evaluate(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=float), self.grid.times, self.values, left=0.0, right=0.0)

    def antiderivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        nodes = self.grid.times
        prim = cumulative_trapezoid(self.values, nodes, initial=0.0)
        tc = np.clip(t, self.grid.t0, self.grid.t1)
        idx = np.clip(np.searchsorted(nodes, tc, side="right") - 1, 0, self.grid.n - 2)
        u = tc - nodes[idx]
        slope = (self.values[idx + 1] - self.values[idx]) / self.grid.dt
        return prim[idx] + self.values[idx] * u + 0.5 * slope * u * u

    def energy_between(self, a: float, b: float) -> float:
        mask = (self.grid.times >= a) & (self.grid.times <= b)
        if mask.all():
            return float(trapezoid(self.values**2, self.grid.times))
        return float(trapezoid(self.values[mask] ** 2, self.grid.times[mask]))


Envelope = Annotated[Union[Soliton, Square, Constant, Sampled], Field(discriminator="kind")]
envelope_adapter = TypeAdapter(Envelope)


class EnergyBudget(BaseModel):
    """Pulse energy E0 = integral of V^2 dt."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    e0: float

    @field_validator("e0")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("energy budget must be > 0")
        return v


class AreaProfile(BaseModel):
    """Pulse area theta at each node, optionally with its rate d(theta)/dt = mu V."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TimeGrid
    theta: np.ndarray
    rate: Optional[np.ndarray] = None

    @field_validator("theta", "rate", mode="before")
    @classmethod
    def _as_array(cls, v):
        if v is None:
            return None
        return _frozen_array(v, ndim=1)

    @model_validator(mode="after")
    def _check_length(self) -> "AreaProfile":
        for name in ("theta", "rate"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != self.grid.n:
                raise ValueError(f"{name} must have {self.grid.n} entries")
        return self

    @property
    def total(self) -> float:
        return float(self.theta[-1] - self.theta[0])


def _samples(env: _Envelope, grid: TimeGrid) -> np.ndarray:
    v = env.evaluate(grid.times)
    if not np.all(np.isfinite(v)):
        raise EnvelopeError("envelope has non-finite samples")
    return v


def soliton_envelope(sys: TwoLevelSystem, budget: EnergyBudget) -> Soliton:
    """Energy-E0 sech pulse with lambda = 4/(mu E0)^2."""
    lam = 4.0 / (sys.mu * budget.e0) ** 2
    return Soliton(order=1, lam=lam, mu=sys.mu)


def n_pi_soliton(
    sys: TwoLevelSystem, order: int, budget: Optional[EnergyBudget] = None
) -> tuple[Soliton, EnergyBudget]:
    """Area order*pi member of the sech family.

    The width is that of the fundamental soliton for `budget` (lambda = 1 when
    omitted); the amplitude is scaled by `order`, so the returned energy is
    order^2 times the fundamental one.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    lam = 1.0 if budget is None else 4.0 / (sys.mu * budget.e0) ** 2
    env = Soliton(order=order, lam=lam, mu=sys.mu)
    energy = 2.0 * order**2 / (sys.mu * math.sqrt(lam))
    return env, EnergyBudget(e0=energy)


def constant_pulse(sys: TwoLevelSystem, t_control: float) -> tuple[Constant, EnergyBudget]:
    """Minimal-energy pulse reaching area pi/2 at t_control."""
    if not t_control > 0:
        raise ValueError("t_control must be > 0")
    amplitude = math.pi / (2.0 * sys.mu * t_control)
    env = Constant(amplitude=amplitude, start=0.0, stop=t_control)
    return env, EnergyBudget(e0=math.pi**2 / (4.0 * sys.mu**2 * t_control))


def square_pulse_matching(sys: TwoLevelSystem, area: float, budget: EnergyBudget) -> Square:
    """Square pulse centred on t = 0 with the given area and energy."""
    if not area > 0:
        raise ValueError("area must be > 0")
    amplitude = sys.mu * budget.e0 / area
    duration = area**2 / (sys.mu**2 * budget.e0)
    return Square(amplitude=amplitude, start=-0.5 * duration, stop=0.5 * duration)


def pulse_area(env: _Envelope, sys: TwoLevelSystem, grid: TimeGrid) -> AreaProfile:
    """theta(t) = mu * integral of V from grid.t0 to t, at every node."""
    v = _samples(env, grid)
    if isinstance(env, Sampled) and env.grid == grid:
        theta = sys.mu * cumulative_trapezoid(v, grid.times, initial=0.0)
    else:
        prim = env.antiderivative(grid.times)
        theta = sys.mu * (prim - prim[0])
    return AreaProfile(grid=grid, theta=theta, rate=sys.mu * v)


def pulse_energy(env: _Envelope, grid: TimeGrid) -> float:
    """Integral of V^2 over the grid interval."""
    _samples(env, grid)
    return float(env.energy_between(grid.t0, grid.t1))


def sample(env: _Envelope, grid: TimeGrid) -> Sampled:
    """env evaluated at the grid nodes, as the linear interpolant of those samples."""
    return Sampled(grid=grid, values=env.evaluate(grid.times))


def energy_scaled(env: _Envelope, grid: TimeGrid, budget: EnergyBudget) -> Sampled:
    """Samples of env rescaled so that the trapezoidal energy equals budget.e0."""
    v = _samples(env, grid)
    energy = float(trapezoid(v * v, grid.times))
    if energy <= 0:
        raise EnvelopeError("cannot rescale an identically zero envelope")
    return Sampled(grid=grid, values=v * math.sqrt(budget.e0 / energy))


def spectral_width(env: _Envelope, grid: TimeGrid) -> float:
    """RMS angular bandwidth of |FFT(V)|^2."""
    v = _samples(env, grid)
    power = np.abs(np.fft.rfft(v)) ** 2
    total = power.sum()
    if total == 0:
        raise EnvelopeError("spectral width of a zero envelope is undefined")
    freqs = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.dt)
    return float(np.sqrt(np.sum(freqs**2 * power) / total))
