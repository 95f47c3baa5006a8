"""Command-line entry point: simulations, figure data, optimization and audits.

Exit codes: 0 success, 2 configuration or parameter error, 3 numerical failure,
4 optimizer did not converge while [optimizer] require_convergence is set.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from twolevel import presets
from twolevel.config import RunConfig, config_hash, load_run_config, settings
from twolevel.dynamics import IntegratorConfig, adiabaticity_ratio, min_eigenvalue, propagate, trace_drift
from twolevel.errors import BoundStateError, ConfigError, EnvelopeError, FitnessError, TwoLevelError
from twolevel.fitness import IntegratedUpper, TerminalUpper, evaluate, integrated_occupation_curve
from twolevel.io import (
    provenance,
    read_envelope_csv,
    write_area_csv,
    write_csv,
    write_envelope_csv,
    write_json,
    write_manifest,
    write_trajectory_csv,
)
from twolevel.models import TwoLevelSystem
from twolevel.morse import analytic_energy, bound_state_count, eigenstates, transition
from twolevel.optimizer import optimize, perturbation_audit
from twolevel.pulses import (
    EnergyBudget,
    constant_pulse,
    pulse_area,
    pulse_energy,
    soliton_envelope,
    spectral_width,
    square_pulse_matching,
)
from twolevel.variational import area_center

logger = logging.getLogger("twolevel.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4


class Run:
    """Output directory, provenance stanza and the files written so far."""

    def __init__(self, cfg: RunConfig, command: str, out: Optional[str], overrides: dict):
        self.cfg = cfg
        self.out_dir = Path(out or cfg.output.dir)
        self.prefix = cfg.output.prefix
        self.stanza = provenance(config_hash(cfg), command)
        if overrides:
            self.stanza["overrides"] = overrides
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        return self.out_dir / f"{self.prefix}{name}"

    def csv(self, name: str, header, columns) -> None:
        self.files.append(write_csv(self.path(name), header, columns))

    def json(self, name: str, payload: dict) -> None:
        self.files.append(write_json(self.path(name), payload, self.stanza))

    def finish(self) -> None:
        write_manifest(self.out_dir, self.files, self.stanza)


def _maybe_ratio(env, sys, grid) -> Optional[float]:
    try:
        return adiabaticity_ratio(env, sys, grid)
    except EnvelopeError:
        return None


def cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    sys = cfg.two_level_system()
    grid = cfg.time_grid()
    env, _ = cfg.envelope()
    traj = propagate(sys, env, grid, cfg=cfg.integrator_config())
    summary = {
        "Q22": evaluate(IntegratedUpper(), traj),
        "energy": pulse_energy(env, grid),
        "area": pulse_area(env, sys, grid).total,
        "adiabaticity_ratio": _maybe_ratio(env, sys, grid),
        "trace_drift": trace_drift(traj),
        "min_eigenvalue": min_eigenvalue(traj),
    }
    spec = cfg.fitness_spec()
    if isinstance(spec, TerminalUpper):
        summary["rho22_at_t_control"] = evaluate(spec, traj)
    run.files.append(write_trajectory_csv(run.path("trajectory.csv"), traj))
    run.csv("occupation.csv", ("t", "int_rho22"), [grid.times, integrated_occupation_curve(traj)])
    run.json("simulate.json", summary)
    logger.info(f"simulate: Q22={summary['Q22']:.10g}")
    return EXIT_OK


def cmd_fig1(run: Run) -> int:
    sys = presets.fig1_system()
    budget = presets.fig1_budget()
    grid = presets.fig1_grid()
    integrator = run.cfg.integrator_config()
    pulses = {
        "soliton": soliton_envelope(sys, budget),
        "square": square_pulse_matching(sys, presets.FIG1_AREA, budget),
    }
    finals = {}
    for name, env in pulses.items():
        traj = propagate(sys, env, grid, cfg=integrator)
        curve = integrated_occupation_curve(traj)
        finals[name] = float(curve[-1])
        run.csv(f"fig1_{name}_envelope.csv", ("t", "V"), [grid.times, env.evaluate(grid.times)])
        run.csv(f"fig1_{name}_occupation.csv", ("t", "int_rho22"), [grid.times, curve])
    ratio = finals["soliton"] / finals["square"]
    run.json(
        "fig1.json",
        {
            "mu": sys.mu,
            "energy": budget.e0,
            "area": presets.FIG1_AREA,
            "Q22_soliton": finals["soliton"],
            "Q22_square": finals["square"],
            "ratio": ratio,
            "ratio_expected": 8.0 / math.pi**2,
        },
    )
    logger.info(f"fig1: Q22 soliton={finals['soliton']:.6f} square={finals['square']:.6f} ratio={ratio:.6f}")
    return EXIT_OK


def _reference_report(path: Path, sys: TwoLevelSystem, t_control: float, e_opt: float, integrator) -> dict:
    ref = read_envelope_csv(path)
    traj = propagate(sys, ref, ref.grid, cfg=integrator)
    energy = pulse_energy(ref, ref.grid)
    return {
        "path": str(path),
        "energy": energy,
        "area": pulse_area(ref, sys, ref.grid).total,
        "rho22_at_t_control": evaluate(TerminalUpper(t_control=t_control), traj),
        "spectral_width": spectral_width(ref, ref.grid),
        "energy_ratio": energy / e_opt,
    }


def cmd_fig2(run: Run, mass: Optional[float], t_control: float, reference: Optional[str]) -> int:
    cfg = run.cfg
    model = cfg.morse_model(mass)
    mu, omega, _ = transition(model, check_resolution=cfg.morse.check_resolution)
    sys = TwoLevelSystem(mu=mu, omega=omega)
    env, budget = constant_pulse(sys, t_control)
    grid = presets.fig2_grid(t_control)
    integrator = cfg.integrator_config()
    traj = propagate(sys, env, grid, cfg=integrator)
    rho22 = evaluate(TerminalUpper(t_control=t_control), traj)
    payload = {
        "mass": model.mass,
        "mu": mu,
        "omega": omega,
        "t_control": t_control,
        "amplitude": env.amplitude,
        "E0": budget.e0,
        "area_identity": env.amplitude * mu * t_control,
        "energy_identity": budget.e0 * 4.0 * mu**2 * t_control,
        "rho22_at_t_control": rho22,
        "spectral_width": spectral_width(env, grid),
        "adiabaticity_ratio": adiabaticity_ratio(env, sys, grid),
    }
    if reference:
        payload["reference"] = _reference_report(Path(reference), sys, t_control, budget.e0, integrator)
    run.csv("fig2_envelope.csv", ("t", "V"), [grid.times, env.evaluate(grid.times)])
    run.json("fig2.json", payload)
    if rho22 < 1.0 - 1e-6:
        logger.error(f"fig2: simulated rho22(t_control)={rho22:.12f} below 1 - 1e-6")
        return EXIT_NUMERIC
    logger.info(f"fig2: mu={mu:.8g} omega={omega:.8g} amplitude={env.amplitude:.6e}")
    return EXIT_OK


def cmd_optimize(run: Run, seed: Optional[int]) -> int:
    cfg = run.cfg
    prob = cfg.optimization_problem(seed)
    report = optimize(prob)
    env = report.envelope
    summary = report.summary()
    summary["seed"] = prob.seed
    profile = pulse_area(env, prob.sys, prob.grid)
    summary["area"] = profile.total
    summary["energy"] = pulse_energy(env, prob.grid)
    summary["center"] = area_center(profile) if profile.total != 0 else None
    run.files.append(write_envelope_csv(run.path("optimize_envelope.csv"), env))
    run.files.append(write_area_csv(run.path("optimize_area.csv"), profile))
    run.json("optimize_report.json", summary)
    if not report.converged and cfg.optimizer.require_convergence:
        logger.error(f"optimizer did not converge ({report.reason})")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_audit(run: Run, seed: Optional[int]) -> int:
    cfg = run.cfg
    sys = cfg.two_level_system()
    spec = cfg.fitness_spec()
    if isinstance(spec, TerminalUpper):
        _, budget = constant_pulse(sys, spec.t_control)
    elif cfg.pulse.energy is not None:
        budget = EnergyBudget(e0=cfg.pulse.energy)
    else:
        raise ConfigError("the audit of the integrated loss needs [pulse] energy")
    audit = cfg.audit
    table = perturbation_audit(
        sys,
        budget,
        spec,
        n_trials=audit.n_trials,
        seed=audit.seed if seed is None else seed,
        amplitude=audit.amplitude,
        integrator=IntegratorConfig(substeps=1),
    )
    run.csv("audit.csv", ("trial", "delta"), list(table.rows().T))
    run.json(
        "audit.json",
        {
            "fitness": spec.kind,
            "baseline_fitness": table.baseline_fitness,
            "amplitude": table.amplitude,
            "n_trials": audit.n_trials,
            "worst_improvement": table.worst(),
            "passed": table.passed(),
            "signed_wins": table.signed_wins(),
        },
    )
    return EXIT_OK if table.passed() else EXIT_NUMERIC


def cmd_morse(run: Run, mass: Optional[float]) -> int:
    cfg = run.cfg
    model = cfg.morse_model(mass)
    energies, psi = eigenstates(model, 2, check_resolution=cfg.morse.check_resolution)
    mu, omega, _ = transition(model, check_resolution=False)
    run.csv("morse_wavefunctions.csv", ("r", "psi0", "psi1"), [model.radial_grid, psi[0], psi[1]])
    run.json(
        "morse.json",
        {
            "mass": model.mass,
            "mu": mu,
            "omega": omega,
            "energies": [float(e) for e in energies],
            "analytic_energies": [analytic_energy(model, n) for n in range(2)],
            "bound_states": bound_state_count(model),
            "n_r": model.n_r,
            "stencil": model.stencil,
        },
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twolevel", description="Optimal pulses for driven two-level systems.")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default {settings.LOG_LEVEL}).")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", default=None, help="TOML run configuration.")
        p.add_argument("--out", default=None, help="Output directory (default from [output] dir).")
        return p

    add("simulate", "Propagate the configured pulse and summarize the fitness.")
    add("fig1", "Integrated occupation of the soliton and the matched square pulse.")
    p = add("fig2", "Constant pi/2 pulse for the Morse transition.")
    p.add_argument("--mass", type=float, default=None, help="Reduced mass of the oscillator (a.u.).")
    p.add_argument("--t-control", type=float, default=None, help=f"Control time (a.u., default {presets.FIG2_T_CONTROL:g}).")
    p.add_argument("--reference", default=None, help="Digitized reference envelope CSV (t,V).")
    p = add("optimize", "Energy-constrained numerical optimization.")
    p.add_argument("--seed", type=int, default=None, help="Random seed (overrides [optimizer] seed).")
    p = add("audit", "Perturbation audit of the analytic optimum.")
    p.add_argument("--seed", type=int, default=None, help="Random seed (overrides [audit] seed).")
    p = add("morse", "Morse eigenstates, dipole element and carrier frequency.")
    p.add_argument("--mass", type=float, default=None, help="Reduced mass of the oscillator (a.u.).")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        key: getattr(args, key)
        for key in ("seed", "mass", "t_control", "reference")
        if getattr(args, key, None) is not None
    }
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        run = Run(cfg, args.command, args.out, overrides)
        logger.info(f"{args.command}: config hash {run.stanza['config_hash'][:12]}")
        if args.command == "simulate":
            code = cmd_simulate(run)
        elif args.command == "fig1":
            code = cmd_fig1(run)
        elif args.command == "fig2":
            t_control = presets.FIG2_T_CONTROL if args.t_control is None else args.t_control
            code = cmd_fig2(run, args.mass, t_control, args.reference)
        elif args.command == "optimize":
            code = cmd_optimize(run, args.seed)
        elif args.command == "audit":
            code = cmd_audit(run, args.seed)
        else:
            code = cmd_morse(run, args.mass)
        run.finish()
        return code
    except (ConfigError, FitnessError, BoundStateError, ValidationError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TwoLevelError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"invalid parameters: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
