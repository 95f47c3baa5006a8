import hashlib
import json
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, model_validator

from twolevel.dynamics import IntegratorConfig
from twolevel.errors import ConfigError
from twolevel.fitness import FitnessSpec, IntegratedUpper, TerminalUpper
from twolevel.io import read_envelope_csv
from twolevel.models import TimeGrid, TwoLevelSystem, make_grid
from twolevel.morse import MorseModel
from twolevel.optimizer import OptimizationProblem
from twolevel.presets import MORSE_PARAMETERS
from twolevel.pulses import (
    EnergyBudget,
    Sampled,
    _Envelope,
    constant_pulse,
    n_pi_soliton,
    soliton_envelope,
    square_pulse_matching,
)

load_dotenv()


class Settings:
    """Process settings loaded from environment variables."""

    OUT_DIR: str = os.getenv("TWOLEVEL_OUT_DIR", "out")
    LOG_LEVEL: str = os.getenv("TWOLEVEL_LOG_LEVEL", "INFO")

    # Numerics defaults
    SUBSTEPS: int = int(os.getenv("TWOLEVEL_SUBSTEPS", "4"))
    MORSE_NR: int = int(os.getenv("TWOLEVEL_MORSE_NR", "4096"))


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(_Section):
    mu: float = 1.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    omega: float = 1.0


class GridSection(_Section):
    t0: float = -50.0
    t1: float = 50.0
    n: int = 4001


class PulseSection(_Section):
    kind: Literal["soliton", "nsoliton", "square", "constant", "zero", "csv"] = "soliton"
    energy: Optional[float] = None
    order: int = 1
    area: float = math.pi
    t_control: Optional[float] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _required_fields(self) -> "PulseSection":
        if self.kind in ("soliton", "square") and self.energy is None:
            raise ValueError(f"pulse kind '{self.kind}' needs 'energy'")
        if self.kind == "constant" and self.t_control is None:
            raise ValueError("pulse kind 'constant' needs 't_control'")
        if self.kind == "csv" and not self.path:
            raise ValueError("pulse kind 'csv' needs 'path'")
        return self


class FitnessSection(_Section):
    kind: Literal["integrated_upper", "terminal_upper"] = "integrated_upper"
    t_control: Optional[float] = None

    @model_validator(mode="after")
    def _terminal_needs_time(self) -> "FitnessSection":
        if self.kind == "terminal_upper" and self.t_control is None:
            raise ValueError("fitness kind 'terminal_upper' needs 't_control'")
        return self


class IntegratorSection(_Section):
    substeps: int = settings.SUBSTEPS
    dt_max: float = math.inf


class OptimizerSection(_Section):
    max_iters: int = 2000
    tol_grad: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    memory: int = 8
    seed: int = 0
    init: Literal["random", "pulse"] = "random"
    target_area: Union[float, Literal["auto", "none"]] = "auto"
    require_convergence: bool = False


class AuditSection(_Section):
    n_trials: int = 100
    amplitude: float = 1e-2
    seed: int = 0


class MorseSection(_Section):
    d0: float = MORSE_PARAMETERS["d0"]
    beta: float = MORSE_PARAMETERS["beta"]
    r_star: float = MORSE_PARAMETERS["r_star"]
    mu0: float = MORSE_PARAMETERS["mu0"]
    r0: float = MORSE_PARAMETERS["r0"]
    mass: Optional[float] = None
    r_min: float = 0.5
    r_max: float = 12.0
    n_r: int = settings.MORSE_NR
    stencil: Literal[2, 4] = 4
    check_resolution: bool = True


class OutputSection(_Section):
    dir: str = settings.OUT_DIR
    prefix: str = ""


class RunConfig(_Section):
    """A whole run, one section per concern."""

    system: SystemSection = SystemSection()
    grid: GridSection = GridSection()
    pulse: PulseSection = PulseSection(energy=2.0)
    fitness: FitnessSection = FitnessSection()
    integrator: IntegratorSection = IntegratorSection()
    optimizer: OptimizerSection = OptimizerSection()
    audit: AuditSection = AuditSection()
    morse: MorseSection = MorseSection()
    output: OutputSection = OutputSection()

    def two_level_system(self) -> TwoLevelSystem:
        """The [system] section as a validated TwoLevelSystem."""
        return TwoLevelSystem(**self.system.model_dump())

    def time_grid(self) -> TimeGrid:
        """Uniform grid from [grid] t0, t1 and n."""
        return make_grid(self.grid.t0, self.grid.t1, self.grid.n)

    def integrator_config(self) -> IntegratorConfig:
        """RK4 settings from [integrator]."""
        return IntegratorConfig(substeps=self.integrator.substeps, dt_max=self.integrator.dt_max)

    def fitness_spec(self) -> FitnessSpec:
        """IntegratedUpper, or TerminalUpper at [fitness] t_control."""
        if self.fitness.kind == "terminal_upper":
            return TerminalUpper(t_control=self.fitness.t_control)
        return IntegratedUpper()

    def envelope(self, base_dir: Optional[Path] = None) -> tuple[_Envelope, Optional[EnergyBudget]]:
        """The configured pulse and its energy budget, when it has one."""
        p = self.pulse
        sys = self.two_level_system()
        budget = EnergyBudget(e0=p.energy) if p.energy is not None else None
        if p.kind == "soliton":
            return soliton_envelope(sys, budget), budget
        if p.kind == "nsoliton":
            return n_pi_soliton(sys, p.order, budget)
        if p.kind == "square":
            return square_pulse_matching(sys, p.area, budget), budget
        if p.kind == "constant":
            return constant_pulse(sys, p.t_control)
        if p.kind == "zero":
            grid = self.time_grid()
            return Sampled(grid=grid, values=np.zeros(grid.n)), budget
        path = Path(p.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_envelope_csv(path), budget

    def morse_model(self, mass: Optional[float] = None) -> MorseModel:
        """The [morse] well; an explicit mass overrides the configured one, and one of them is required."""
        fields = self.morse.model_dump(exclude={"check_resolution"})
        fields["mass"] = mass if mass is not None else self.morse.mass
        if fields["mass"] is None:
            raise ConfigError("the Morse reduced mass is required (--mass or [morse] mass)")
        return MorseModel(**fields)

    def optimization_problem(self, seed: Optional[int] = None) -> OptimizationProblem:
        """Everything optimize needs, with the budget taken from [pulse] energy.

        init = "pulse" starts from the configured pulse sampled on the grid; seed
        overrides [optimizer] seed.
        """
        opt = self.optimizer
        env, budget = self.envelope()
        if budget is None:
            raise ConfigError("optimization needs an energy budget: set [pulse] energy")
        grid = self.time_grid()
        init = None
        if opt.init == "pulse":
            init = Sampled(grid=grid, values=env.evaluate(grid.times))
        target = None if opt.target_area == "none" else opt.target_area
        return OptimizationProblem(
            sys=self.two_level_system(),
            grid=grid,
            spec=self.fitness_spec(),
            budget=budget,
            init=init,
            max_iters=opt.max_iters,
            armijo=opt.armijo,
            backtrack=opt.backtrack,
            max_backtracks=opt.max_backtracks,
            memory=opt.memory,
            tol_grad=opt.tol_grad,
            seed=opt.seed if seed is None else seed,
            target_area=target,
            integrator=self.integrator_config(),
        )


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e
    return RunConfig.model_validate(raw)


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON form of the configuration."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
