"""Core domain types shared by every module (atomic units, hbar = 1)."""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field, field_validator, model_validator


def _frozen_array(value, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class TwoLevelSystem(BaseModel):
    """Physical parameters of the resonantly driven two-level system."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    mu: float
    gamma1: float = 0.0
    gamma2: float = 0.0
    omega: float = 1.0

    @field_validator("mu", "omega")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("gamma1", "gamma2")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    def preserves_positivity(self) -> bool:
        """True when gamma2 >= gamma1/2, the regime where the density matrix stays positive."""
        return self.gamma2 >= 0.5 * self.gamma1


class TimeGrid(BaseModel):
    """Uniform time grid on [t0, t1] with n nodes."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    t0: float
    t1: float
    n: int

    @model_validator(mode="after")
    def _check_bounds(self) -> "TimeGrid":
        if self.n < 2:
            raise ValueError("a grid needs at least 2 nodes")
        if not self.t1 > self.t0:
            raise ValueError("t1 must be greater than t0")
        if not self.dt > 0:
            raise ValueError("grid spacing underflows")
        return self

    @computed_field
    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / (self.n - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n)

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def node(self, i: int) -> float:
        if i == self.n - 1:
            return self.t1
        return self.t0 + i * self.dt

    def contains(self, t: float) -> bool:
        return self.t0 <= t <= self.t1

    def trapezoid_weights(self) -> np.ndarray:
        """Quadrature weights w with sum(w * f) the trapezoidal integral of f."""
        w = np.full(self.n, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


class BlochState(BaseModel):
    """Reduced density matrix: two populations and the RWA coherence."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    rho11: float
    rho22: float
    re12: float = 0.0
    im12: float = 0.0

    @classmethod
    def from_array(cls, values) -> "BlochState":
        r11, r22, re, im = (float(v) for v in values)
        return cls(rho11=r11, rho22=r22, re12=re, im12=im)

    def as_array(self) -> np.ndarray:
        return np.array([self.rho11, self.rho22, self.re12, self.im12])

    @property
    def trace(self) -> float:
        return self.rho11 + self.rho22

    @property
    def purity(self) -> float:
        """tr(rho^2)."""
        return self.rho11**2 + self.rho22**2 + 2.0 * (self.re12**2 + self.im12**2)

    def min_eigenvalue(self) -> float:
        split = math.hypot(self.rho11 - self.rho22, 2.0 * math.hypot(self.re12, self.im12))
        return 0.5 * (self.trace - split)

    def is_physical(self, tol: float = 1e-9) -> bool:
        return (
            abs(self.trace - 1.0) <= tol
            and -tol <= self.rho22 <= 1.0 + tol
            and self.re12**2 + self.im12**2 <= self.rho11 * self.rho22 + tol
        )


class BlochTrajectory(BaseModel):
    """Bloch states recorded at every node of a time grid (columns rho11, rho22, re12, im12)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TimeGrid
    states: np.ndarray

    @field_validator("states", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        return _frozen_array(v, ndim=2)

    @model_validator(mode="after")
    def _check_shape(self) -> "BlochTrajectory":
        if self.states.shape != (self.grid.n, 4):
            raise ValueError(f"states must have shape ({self.grid.n}, 4), got {self.states.shape}")
        return self

    def __len__(self) -> int:
        return self.grid.n

    def state(self, i: int) -> BlochState:
        return BlochState.from_array(self.states[i])

    @property
    def rho11(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def rho22(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def re12(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def im12(self) -> np.ndarray:
        return self.states[:, 3]


def make_grid(t0: float, t1: float, n: int) -> TimeGrid:
    """Uniform grid with node i at t0 + i*dt."""
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("grid bounds must be finite")
    return TimeGrid(t0=t0, t1=t1, n=n)


def ground_state() -> BlochState:
    """rho11 = 1, everything else 0."""
    return BlochState(rho11=1.0, rho22=0.0, re12=0.0, im12=0.0)
