"""Morse oscillator: two lowest vibrational states, transition dipole and frequency.

V(r) = D0 (exp(-beta (r - r*)) - 1)^2 - D0, dipole function mu0 r exp(-r / r0).
The Hamiltonian is discretized by finite differences with Dirichlet walls at
r_min and r_max; the closed-form spectrum and Laguerre eigenfunctions serve as
oracles.
"""

import logging
import math
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.sparse.linalg import eigsh
from scipy.special import eval_genlaguerre, gammaln

from twolevel.errors import BoundStateError, GridResolutionError

logger = logging.getLogger(__name__)

RESOLUTION_TOL = 1e-8


class MorseModel(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    d0: float
    beta: float
    r_star: float
    mu0: float
    r0: float
    mass: float
    r_min: float = 0.5
    r_max: float = 12.0
    n_r: int = 4096
    stencil: Literal[2, 4] = 4

    @field_validator("d0", "beta", "mass", "r0")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("n_r")
    @classmethod
    def _enough_points(cls, v: int) -> int:
        if v < 64:
            raise ValueError("n_r must be >= 64")
        return v

    @model_validator(mode="after")
    def _check_range(self) -> "MorseModel":
        if not self.r_max > self.r_min:
            raise ValueError("r_max must be greater than r_min")
        return self

    @property
    def radial_grid(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r)

    @property
    def harmonic_frequency(self) -> float:
        """omega0 = beta sqrt(2 D0 / m)."""
        return self.beta * math.sqrt(2.0 * self.d0 / self.mass)

    def potential(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.d0 * (np.exp(-self.beta * (r - self.r_star)) - 1.0) ** 2 - self.d0

    def dipole(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.mu0 * r * np.exp(-r / self.r0)

    def refined(self) -> "MorseModel":
        """Same model with the grid spacing halved."""
        return self.model_copy(update={"n_r": 2 * (self.n_r - 1) + 1})


def bound_state_count(model: MorseModel) -> int:
    return math.floor(math.sqrt(2.0 * model.mass * model.d0) / model.beta - 0.5) + 1


def _hamiltonian(model: MorseModel) -> sparse.csc_matrix:
    r = model.radial_grid[1:-1]
    h = (model.r_max - model.r_min) / (model.n_r - 1)
    m = r.shape[0]
    if model.stencil == 4:
        scale = 1.0 / (24.0 * model.mass * h * h)
        diagonals = [
            np.full(m - 2, scale),
            np.full(m - 1, -16.0 * scale),
            30.0 * scale + model.potential(r),
            np.full(m - 1, -16.0 * scale),
            np.full(m - 2, scale),
        ]
        offsets = [-2, -1, 0, 1, 2]
    else:
        scale = 1.0 / (2.0 * model.mass * h * h)
        diagonals = [np.full(m - 1, -scale), 2.0 * scale + model.potential(r), np.full(m - 1, -scale)]
        offsets = [-1, 0, 1]
    return sparse.diags(diagonals, offsets, format="csc")


def _fix_sign(psi: np.ndarray) -> np.ndarray:
    """Make psi positive at its first sample above 1% of the peak magnitude."""
    mag = np.abs(psi)
    first = int(np.argmax(mag >= 1e-2 * mag.max()))
    return psi if psi[first] > 0 else -psi


def _solve(model: MorseModel, k: int) -> tuple[np.ndarray, np.ndarray]:
    energies, vectors = eigsh(_hamiltonian(model), k=k, sigma=-model.d0, which="LM")
    order = np.argsort(energies)
    energies = energies[order]
    h = (model.r_max - model.r_min) / (model.n_r - 1)
    psi = np.zeros((k, model.n_r))
    for row, col in enumerate(order):
        vec = vectors[:, col] / math.sqrt(h)
        psi[row, 1:-1] = _fix_sign(vec)
    return energies, psi


def eigenstates(model: MorseModel, k: int, check_resolution: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Lowest k bound states: energies (k,) and wavefunctions (k, n_r) on model.radial_grid.

    With check_resolution the spectrum is recomputed on a grid of half the
    spacing and any eigenvalue shift above 1e-8 raises GridResolutionError.
    """
    count = bound_state_count(model)
    if not 1 <= k <= count:
        raise BoundStateError(f"requested {k} states, the well supports {count}")
    energies, psi = _solve(model, k)
    if check_resolution:
        fine, _ = _solve(model.refined(), k)
        shift = float(np.max(np.abs(fine - energies)))
        logger.debug(f"grid doubling {model.n_r} -> {model.refined().n_r}: max eigenvalue shift {shift:.3e}")
        if shift > RESOLUTION_TOL:
            raise GridResolutionError(
                f"eigenvalues moved by {shift:.3e} under grid doubling at n_r={model.n_r}"
            )
    if np.any(energies >= 0):
        raise BoundStateError("finite-difference spectrum reached the dissociation limit")
    return energies, psi


def _lowest_pair(model: MorseModel, check_resolution: bool) -> tuple[np.ndarray, np.ndarray]:
    if bound_state_count(model) < 2:
        raise BoundStateError("the well supports fewer than two bound states")
    return eigenstates(model, 2, check_resolution=check_resolution)


def _matrix_element(model: MorseModel, psi: np.ndarray, operator=None) -> float:
    r = model.radial_grid
    weight = model.dipole(r) if operator is None else operator(r)
    return float(trapezoid(psi[0] * weight * psi[1], r))


def dipole_element(
    model: MorseModel,
    operator: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    check_resolution: bool = True,
) -> float:
    """<psi0 | mu(r) | psi1> by trapezoidal quadrature; operator replaces the dipole function."""
    _, psi = _lowest_pair(model, check_resolution)
    return _matrix_element(model, psi, operator)


def carrier_frequency(model: MorseModel, check_resolution: bool = True) -> float:
    """E1 - E0, the resonant carrier frequency."""
    energies, _ = _lowest_pair(model, check_resolution)
    return float(energies[1] - energies[0])


def transition(model: MorseModel, check_resolution: bool = True) -> tuple[float, float, np.ndarray]:
    """(|mu|, omega, wavefunctions) of the 0 -> 1 transition from one eigen solve."""
    energies, psi = _lowest_pair(model, check_resolution)
    mu = abs(_matrix_element(model, psi))
    omega = float(energies[1] - energies[0])
    logger.info(f"Morse transition: mu={mu:.10g} omega={omega:.10g} (mass={model.mass:g})")
    return mu, omega, psi


def analytic_energy(model: MorseModel, n: int) -> float:
    """E_n = -D0 + omega0 (n + 1/2) - [omega0 (n + 1/2)]^2 / (4 D0)."""
    if not 0 <= n < bound_state_count(model):
        raise BoundStateError(f"level {n} is not bound")
    x = model.harmonic_frequency * (n + 0.5)
    return -model.d0 + x - x * x / (4.0 * model.d0)


def analytic_eigenfunction(model: MorseModel, n: int, r) -> np.ndarray:
    """Normalized closed-form eigenfunction (generalized Laguerre form), sign as in eigenstates."""
    if not 0 <= n < bound_state_count(model):
        raise BoundStateError(f"level {n} is not bound")
    r = np.asarray(r, dtype=float)
    lam = math.sqrt(2.0 * model.mass * model.d0) / model.beta
    s = lam - n - 0.5
    z = 2.0 * lam * np.exp(-model.beta * (r - model.r_star))
    log_norm = 0.5 * (
        math.log(model.beta * (2.0 * lam - 2.0 * n - 1.0)) + gammaln(n + 1.0) - gammaln(2.0 * lam - n)
    )
    envelope = np.exp(log_norm + s * np.log(z) - 0.5 * z)
    return _fix_sign(envelope * eval_genlaguerre(n, 2.0 * s, z))
