"""Energy-constrained numerical optimal control of sampled envelopes.

The envelope lives on the grid nodes and enters the dynamics through its linear
interpolant. The fitness is differentiated exactly through the RK4 step matrices
(a discrete adjoint), so the gradient is the true derivative of what propagate
computes. Iterates stay on the admissible set: fixed trapezoidal energy E0 and,
when pinned, fixed total area.
"""

import logging
import math
from typing import Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import trapezoid

from twolevel.dynamics import IntegratorConfig, Propagation, StepSchedule, cumulative_products
from twolevel.errors import ConfigError, EnvelopeError
from twolevel.fitness import FitnessSpec, IntegratedUpper, TerminalUpper, occupation_weights
from twolevel.fitness import evaluate as evaluate_fitness
from twolevel.models import TimeGrid, TwoLevelSystem, _frozen_array, ground_state, make_grid
from twolevel.pulses import (
    EnergyBudget,
    Sampled,
    constant_pulse,
    energy_scaled,
    pulse_area,
    sample,
    soliton_envelope,
)

logger = logging.getLogger(__name__)

RANDOM_MODES = 8
# a random start keeps its bump this many widths away from the window edges
BUMP_HALF_WIDTH = 8.0


class OptimizationProblem(BaseModel):
    """What to optimize and how hard to try.

    target_area pins mu * integral of V (the pulse area) on top of the energy;
    "auto" pins pi for the integrated loss, whose optimum is defined by
    theta(t1) = pi, and leaves the terminal objective unpinned.

    memory is the number of L-BFGS curvature pairs kept; 0 falls back to
    Barzilai-Borwein scaled gradient steps.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sys: TwoLevelSystem
    grid: TimeGrid
    spec: FitnessSpec
    budget: EnergyBudget
    init: Optional[Sampled] = None
    max_iters: int = 2000
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    memory: int = 8
    tol_grad: float = 1e-6
    seed: int = 0
    target_area: Union[float, None, Literal["auto"]] = "auto"
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)

    @field_validator("tol_grad")
    @classmethod
    def _positive_tol(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("tol_grad must be > 0")
        return v

    @field_validator("armijo", "backtrack")
    @classmethod
    def _unit_interval(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("must lie in (0, 1)")
        return v

    @field_validator("max_iters", "max_backtracks", "memory")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @model_validator(mode="after")
    def _check_consistency(self) -> "OptimizationProblem":
        self.spec.check(self.grid)
        if self.init is not None and self.init.grid != self.grid:
            raise ValueError("initial envelope must be sampled on the problem grid")
        area = self.pinned_area
        if area is not None:
            # largest reachable area at this energy is mu * sqrt(E0 * duration)
            bound = self.sys.mu * math.sqrt(self.budget.e0 * self.grid.duration)
            if not abs(area) < bound:
                raise ValueError(f"target area {area:g} not below the energy bound {bound:g}")
        return self

    @property
    def pinned_area(self) -> Optional[float]:
        if self.target_area == "auto":
            return math.pi if isinstance(self.spec, IntegratedUpper) else None
        return self.target_area


class AdjointTrajectory(BaseModel):
    """Costates at the grid nodes, conjugate to (rho11, rho22, re12, im12).

    Row i is the sensitivity of the fitness still to be collected after node i
    to the state at node i, so the running cost leaves a zero terminal value and
    a terminal objective enters as a jump at t_control.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TimeGrid
    costates: np.ndarray

    @field_validator("costates", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        return _frozen_array(v, ndim=2)

    @model_validator(mode="after")
    def _check_shape(self) -> "AdjointTrajectory":
        if self.costates.shape != (self.grid.n, 4):
            raise ValueError(f"costates must have shape ({self.grid.n}, 4)")
        return self


class OptimizationReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    envelope: Sampled
    fitness_history: list[float]
    grad_norm_history: list[float]
    converged: bool
    iterations: int
    final_fitness: float
    energy_multiplier: float
    maximize: bool
    reason: str

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "reason": self.reason,
            "maximize": self.maximize,
            "final_fitness": self.final_fitness,
            "energy_multiplier": self.energy_multiplier,
            "fitness_history": self.fitness_history,
            "grad_norm_history": self.grad_norm_history,
        }


class AuditTable(BaseModel):
    """Fitness change of each perturbed optimum relative to the unperturbed one."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    maximize: bool
    amplitude: float
    baseline_fitness: float
    deltas: np.ndarray
    signed: np.ndarray

    @field_validator("deltas", "signed", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        return _frozen_array(v, ndim=1)

    @property
    def improvements(self) -> np.ndarray:
        """Per-trial gain in the optimization direction; positive means the perturbation won."""
        return self.deltas if self.maximize else -self.deltas

    def worst(self) -> float:
        return float(np.max(self.improvements))

    def passed(self, tol: float = 1e-9) -> bool:
        return self.worst() <= tol

    def signed_wins(self, tol: float = 1e-9) -> int:
        """Trials where an envelope with negative samples beat the optimum."""
        return int(np.sum((self.improvements > tol) & (self.signed > 0)))

    def rows(self) -> np.ndarray:
        return np.column_stack([np.arange(self.deltas.shape[0]), self.deltas])


def _low_pass(rng: np.random.Generator) -> Callable[[np.ndarray], np.ndarray]:
    """Random field of sine modes with 1/k amplitudes and random phases, over s in [0, 1]."""
    modes = np.arange(1, RANDOM_MODES + 1)
    amplitudes = rng.standard_normal(RANDOM_MODES) / modes
    phases = rng.uniform(0.0, 2.0 * math.pi, RANDOM_MODES)

    def field(s: np.ndarray) -> np.ndarray:
        return np.sin(math.pi * np.outer(s, modes) + phases) @ amplitudes

    return field


class _Objective:
    """Discretized fitness, its adjoint gradient and the admissible-set geometry."""

    def __init__(self, prob: OptimizationProblem):
        self.prob = prob
        self.grid = prob.grid
        self.w = prob.grid.trapezoid_weights()
        self.length = float(self.w.sum())
        self.c = occupation_weights(prob.spec, prob.grid)
        self.sign = -1.0 if prob.spec.maximize else 1.0
        self.area = prob.pinned_area
        self.schedule = StepSchedule(prob.grid, prob.integrator)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.w * f * g))

    def project(self, values: np.ndarray) -> np.ndarray:
        """Closest point with energy E0 (and the pinned area) along the current direction."""
        e0 = self.prob.budget.e0
        if self.area is None:
            env = Sampled(grid=self.grid, values=values)
            return np.array(energy_scaled(env, self.grid, self.prob.budget).values)
        level = self.area / (self.prob.sys.mu * self.length)
        u = values - self.inner(values, np.ones_like(values)) / self.length
        spread = self.inner(u, u)
        if spread <= 0:
            raise EnvelopeError("cannot project a constant envelope with a pinned area")
        return level + u * math.sqrt((e0 - level**2 * self.length) / spread)

    def tangent(self, g: np.ndarray, values: np.ndarray) -> np.ndarray:
        if self.area is None:
            return g - self.inner(g, values) / self.inner(values, values) * values
        ones = np.ones_like(values)
        u = values - self.inner(values, ones) / self.length
        g = g - self.inner(g, ones) / self.length
        return g - self.inner(g, u) / self.inner(u, u) * u

    def forward(self, values: np.ndarray) -> Propagation:
        env = Sampled(grid=self.grid, values=values)
        return Propagation(self.prob.sys, env, self.grid, ground_state(), self.prob.integrator, self.schedule)

    def fitness(self, run: Propagation) -> float:
        return float(self.c @ run.node_states[:, 1])

    def adjoint(self, run: Propagation) -> np.ndarray:
        """dF/dX_j for every substep state X_j."""
        sched = self.schedule
        steps = len(sched)
        source = np.zeros(steps + 1)
        source[sched.node_index] = self.c
        # lam_j = phi_j^T lam_{j+1} + source_j e2, as 5x5 affine maps on (lam, 1)
        maps = np.zeros((steps, 5, 5))
        maps[:, :4, :4] = np.transpose(run.phi, (0, 2, 1))
        maps[:, 1, 4] = source[:steps]
        maps[:, 4, 4] = 1.0
        end = np.zeros(5)
        end[1] = source[steps]
        end[4] = 1.0
        lam = np.empty((steps + 1, 4))
        lam[steps] = end[:4]
        lam[:steps] = (cumulative_products(maps[::-1]) @ end)[::-1, :4]
        return lam

    def node_gradient(self, run: Propagation, lam: np.ndarray) -> np.ndarray:
        """dF/dV_i for the node values V_i."""
        sched = self.schedule
        x = run.substep_states[:-1]
        lnext = lam[1:]
        h = sched.h
        b = run.b
        a1, a2, a4 = run.a1, run.a2, run.a4

        def mv(m, v):
            return np.einsum("sij,sj->si", m, v)

        def tmv(m, v):
            return np.einsum("sji,sj->si", m, v)

        def dot(u, v):
            return np.einsum("si,si->s", u, v)

        bx = x @ b.T
        a1x = mv(a1, x)
        a2x = mv(a2, x)
        a2a1x = mv(a2, a1x)
        a2a2x = mv(a2, a2x)
        a2a2a1x = mv(a2, a2a1x)
        ba1x = a1x @ b.T
        ba2x = a2x @ b.T
        ba2a1x = a2a1x @ b.T

        lb = lnext @ b
        la2 = tmv(a2, lnext)
        la2a2 = tmv(a2, la2)
        la4 = tmv(a4, lnext)
        la4a2 = tmv(a2, la4)
        la4a2a2 = tmv(a2, la4a2)

        h2 = 0.5 * h**2
        h3 = 0.25 * h**3
        g1 = h / 6.0 * (dot(lnext, bx) + h * dot(la2, bx) + h2 * dot(la2a2, bx) + h3 * dot(la4a2a2, bx))
        g4 = h / 6.0 * (dot(lb, x) + h * dot(lb, a2x) + h2 * dot(lb, a2a2x) + h3 * dot(lb, a2a2a1x))
        g2 = h / 6.0 * (
            4.0 * dot(lb, x)
            + h * (dot(lb, a1x) + dot(lb, a2x) + dot(la2, bx) + dot(la4, bx))
            + h2 * (dot(lb, a2a1x) + dot(la2, ba1x) + dot(la4, ba2x) + dot(la4a2, bx))
            + h3 * (dot(la4, ba2a1x) + dot(la4a2, ba1x))
        )

        f1 = sched.frac_lo
        f4 = sched.frac_hi
        f2 = 0.5 * (f1 + f4)
        lower = (1.0 - f1) * g1 + (1.0 - f2) * g2 + (1.0 - f4) * g4
        upper = f1 * g1 + f2 * g2 + f4 * g4
        n = self.grid.n
        return np.bincount(sched.interval, weights=lower, minlength=n) + np.bincount(
            sched.interval + 1, weights=upper, minlength=n
        )

    def gradient(self, run: Propagation) -> np.ndarray:
        """Functional gradient: <g, dV>_w is the first-order change of the fitness."""
        return self.node_gradient(run, self.adjoint(run)) / self.w


def _values_on_grid(prob: OptimizationProblem, env: Sampled) -> np.ndarray:
    if env.grid != prob.grid:
        raise ValueError("envelope must be sampled on the problem grid")
    return np.array(env.values)


def _random_bump(rng: np.random.Generator, prob: OptimizationProblem, area: float) -> Optional[np.ndarray]:
    """Single-signed bump with roughly the pinned area and energy E0, or None if it cannot fit."""
    x = np.linspace(-BUMP_HALF_WIDTH, BUMP_HALF_WIDTH, 4001)
    field = _low_pass(rng)
    peak = np.max(np.abs(field(0.5 + x / (2.0 * BUMP_HALF_WIDTH))))

    def bump(u: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * u**2 + 0.5 * field(0.5 + u / (2.0 * BUMP_HALF_WIDTH)) / peak)

    shape = bump(x)
    i1 = float(trapezoid(shape, x))
    i2 = float(trapezoid(shape**2, x))
    # mu a w i1 = |area| and a^2 w i2 = E0
    reduced = abs(area) / prob.sys.mu
    width = reduced**2 * i2 / (prob.budget.e0 * i1**2)
    amplitude = reduced / (width * i1)

    grid = prob.grid
    margin = BUMP_HALF_WIDTH * width
    if 2.0 * margin > grid.duration:
        return None
    centre = 0.5 * (grid.t0 + grid.t1) + rng.uniform(-1.0, 1.0) * 0.1 * grid.duration
    centre = min(max(centre, grid.t0 + margin), grid.t1 - margin)
    values = amplitude * bump((grid.times - centre) / width)
    return math.copysign(1.0, area) * values


def random_initial_envelope(prob: OptimizationProblem) -> Sampled:
    """Smooth random start of one sign, projected onto the admissible set.

    With a pinned area it is a randomly modulated bump carrying that area, so
    theta runs monotonically between its boundary values; otherwise it is a
    positive random modulation over the whole window.
    """
    rng = np.random.default_rng(prob.seed)
    area = prob.pinned_area
    values = _random_bump(rng, prob, area) if area else None
    if values is None:
        grid = prob.grid
        noise = _low_pass(rng)((grid.times - grid.t0) / grid.duration)
        values = np.exp(0.5 * noise / np.max(np.abs(noise)))
    return Sampled(grid=prob.grid, values=_Objective(prob).project(values))


def project(prob: OptimizationProblem, env: Sampled) -> Sampled:
    return Sampled(grid=prob.grid, values=_Objective(prob).project(_values_on_grid(prob, env)))


def costates(prob: OptimizationProblem, env: Sampled) -> AdjointTrajectory:
    obj = _Objective(prob)
    run = obj.forward(_values_on_grid(prob, env))
    lam = obj.adjoint(run)[obj.schedule.node_index]
    lam[:, 1] -= obj.c
    return AdjointTrajectory(grid=prob.grid, costates=lam)


def gradient(prob: OptimizationProblem, env: Sampled, projected: bool = True) -> np.ndarray:
    """Functional gradient of the fitness with respect to the envelope samples.

    With projected=True the component normal to the admissible set is removed.
    """
    obj = _Objective(prob)
    values = _values_on_grid(prob, env)
    g = obj.gradient(obj.forward(values))
    return obj.tangent(g, values) if projected else g


def area_form_gradient(prob: OptimizationProblem, env: Sampled) -> np.ndarray:
    """Unprojected gradient from rho22 = sin^2(theta), valid without relaxation.

    Integrated loss: mu * integral from t to t1 of sin(2 theta). Terminal
    objective: mu * sin(2 theta(t_control)) before t_control, zero after.
    """
    sys = prob.sys
    if sys.gamma1 != 0 or sys.gamma2 != 0:
        raise ValueError("the area form holds only for gamma1 = gamma2 = 0")
    grid = prob.grid
    theta = pulse_area(env, sys, grid).theta
    if isinstance(prob.spec, IntegratedUpper):
        s = np.sin(2.0 * theta)
        tail = np.concatenate([np.cumsum((0.5 * grid.dt * (s[1:] + s[:-1]))[::-1])[::-1], [0.0]])
        return sys.mu * tail
    c = occupation_weights(prob.spec, grid)
    theta_c = float(c @ theta)
    return np.where(grid.times <= prob.spec.t_control, sys.mu * math.sin(2.0 * theta_c), 0.0)


def _lbfgs_direction(
    obj: _Objective, d: np.ndarray, v: np.ndarray, pairs: list[tuple[np.ndarray, np.ndarray]], scale: float
) -> np.ndarray:
    """Two-loop recursion in the weighted inner product, pairs moved onto the tangent space at v."""
    q = d.copy()
    used = []
    for s, y in reversed(pairs):
        s = obj.tangent(s, v)
        y = obj.tangent(y, v)
        sy = obj.inner(s, y)
        if sy <= 0:
            continue
        a = obj.inner(s, q) / sy
        q -= a * y
        used.append((s, y, sy, a))
    if used:
        s, y, sy, _ = used[0]
        r = sy / obj.inner(y, y) * q
    else:
        r = scale * q
    for s, y, sy, a in reversed(used):
        r += (a - obj.inner(y, r) / sy) * s
    return obj.tangent(r, v)


def optimize(prob: OptimizationProblem) -> OptimizationReport:
    """Projected L-BFGS (or Barzilai-Borwein gradient steps) with Armijo backtracking.

    Every trial point is projected back onto the admissible set. A rejected
    quasi-Newton step drops the curvature memory and retries along the gradient
    before the run is reported as a line-search failure.
    """
    obj = _Objective(prob)
    e0 = prob.budget.e0
    start = prob.init if prob.init is not None else random_initial_envelope(prob)
    v = obj.project(np.array(start.values))
    run = obj.forward(v)
    f = obj.fitness(run)
    fitness_history = [f]
    norms: list[float] = []
    converged = False
    reason = "max_iters"
    scale = None
    prev_v = prev_d = None
    pairs: list[tuple[np.ndarray, np.ndarray]] = []

    for it in range(prob.max_iters + 1):
        g = obj.gradient(run)
        d = obj.tangent(obj.sign * g, v)
        gnorm = math.sqrt(max(obj.inner(d, d), 0.0))
        norms.append(gnorm)
        logger.debug(f"iter {it}: fitness={f:.12g} |grad|={gnorm:.3e} pairs={len(pairs)}")
        if gnorm <= prob.tol_grad:
            converged = True
            reason = "tol_grad"
            break
        if it == prob.max_iters:
            break

        if prev_v is None:
            scale = 0.1 * math.sqrt(e0) / gnorm
        else:
            s = v - prev_v
            y = d - prev_d
            sy = obj.inner(s, y)
            scale = obj.inner(s, s) / sy if sy > 0 else 2.0 * scale
            scale = min(max(scale, 1e-12), 1e12)
            if prob.memory and sy > 1e-12 * math.sqrt(obj.inner(s, s) * obj.inner(y, y)):
                pairs.append((s, y))
                del pairs[: -prob.memory]

        step = _lbfgs_direction(obj, d, v, pairs, scale) if pairs else scale * d
        slope = obj.inner(d, step)
        if not slope > 0:
            pairs.clear()
            step, slope = scale * d, scale * gnorm**2

        accepted = False
        while True:
            alpha = 1.0
            for _ in range(prob.max_backtracks + 1):
                trial = obj.project(v - alpha * step)
                trial_run = obj.forward(trial)
                trial_f = obj.fitness(trial_run)
                if obj.sign * trial_f <= obj.sign * f - prob.armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= prob.backtrack
            if accepted or not pairs:
                break
            logger.debug(f"iter {it}: quasi-Newton step rejected, restarting from the gradient")
            pairs.clear()
            step, slope = scale * d, scale * gnorm**2
        if not accepted:
            reason = "line_search"
            break

        prev_v, prev_d = v, d
        v, run, f = trial, trial_run, trial_f
        fitness_history.append(f)

    envelope = Sampled(grid=prob.grid, values=v)
    final = evaluate_fitness(prob.spec, run.trajectory())
    multiplier = obj.inner(g, v) / (2.0 * e0)
    iterations = len(fitness_history) - 1
    if converged:
        logger.info(f"optimizer converged after {iterations} steps: fitness={final:.10g}")
    else:
        logger.warning(
            f"optimizer stopped ({reason}) after {iterations} steps with |grad|={norms[-1]:.3e}"
        )
    return OptimizationReport(
        envelope=envelope,
        fitness_history=fitness_history,
        grad_norm_history=norms,
        converged=converged,
        iterations=iterations,
        final_fitness=final,
        energy_multiplier=multiplier,
        maximize=prob.spec.maximize,
        reason=reason,
    )


def analytic_optimum(
    sys: TwoLevelSystem, budget: EnergyBudget, spec: FitnessSpec, grid: Optional[TimeGrid] = None
) -> tuple[Sampled, Optional[float]]:
    """The closed-form optimum sampled on grid, with the area to pin.

    Defaults: +-25 widths with 4001 nodes for the soliton, [0, t_control] with
    257 nodes for the constant pulse.
    """
    if isinstance(spec, TerminalUpper):
        env, expected = constant_pulse(sys, spec.t_control)
        if abs(budget.e0 - expected.e0) > 1e-9 * expected.e0:
            raise ConfigError(
                f"energy {budget.e0:g} differs from the optimal pi/2-pulse energy {expected.e0:g}"
            )
        grid = grid or make_grid(0.0, spec.t_control, 257)
        return sample(env, grid), None
    env = soliton_envelope(sys, budget)
    grid = grid or make_grid(-25.0 * env.width, 25.0 * env.width, 4001)
    return sample(env, grid), math.pi


def perturbation_audit(
    sys: TwoLevelSystem,
    budget: EnergyBudget,
    spec: FitnessSpec,
    n_trials: int,
    seed: int,
    amplitude: float = 1e-2,
    grid: Optional[TimeGrid] = None,
    integrator: Optional[IntegratorConfig] = None,
) -> AuditTable:
    """Fitness deltas of random admissible perturbations of the analytic optimum.

    Each perturbation is a low-pass random field with weighted norm amplitude
    times that of the optimum, added and then projected back onto the admissible set.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    base_env, area = analytic_optimum(sys, budget, spec, grid)
    prob = OptimizationProblem(
        sys=sys,
        grid=base_env.grid,
        spec=spec,
        budget=budget,
        init=base_env,
        target_area=area,
        integrator=integrator or IntegratorConfig(substeps=1),
    )
    obj = _Objective(prob)
    base = obj.project(np.array(base_env.values))
    f0 = obj.fitness(obj.forward(base))
    scale = math.sqrt(obj.inner(base, base))

    rng = np.random.default_rng(seed)
    deltas = np.empty(n_trials)
    signed = np.empty(n_trials)
    for trial in range(n_trials):
        noise = _low_pass(rng)((prob.grid.times - prob.grid.t0) / prob.grid.duration)
        if amplitude == 0:
            perturbed = base
        else:
            noise *= amplitude * scale / math.sqrt(obj.inner(noise, noise))
            perturbed = obj.project(base + noise)
        deltas[trial] = obj.fitness(obj.forward(perturbed)) - f0
        signed[trial] = float(np.any(perturbed < 0))
    table = AuditTable(
        maximize=spec.maximize, amplitude=amplitude, baseline_fitness=f0, deltas=deltas, signed=signed
    )
    logger.info(f"audit: {n_trials} trials, worst improvement {table.worst():.3e}")
    if table.signed_wins():
        logger.warning(f"audit: {table.signed_wins()} signed envelopes beat the analytic optimum")
    return table
