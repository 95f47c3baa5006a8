import json
import math
from unittest.mock import patch

import numpy as np
import pytest

import main
from tests.conftest import OH_MASS
from twolevel.io import file_sha256, read_envelope_csv
from twolevel.optimizer import OptimizationReport
from twolevel.pulses import Sampled


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_json(path):
    return json.loads(path.read_text())


SMALL_OPTIMIZE = """
[grid]
t0 = -15.0
t1 = 15.0
n = 151

[optimizer]
max_iters = 15
seed = 9
"""


# --- simulate ---

def test_simulate_default_soliton(tmp_path):
    assert main.main(["simulate", "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "simulate.json")
    assert summary["Q22"] == pytest.approx(2.0, abs=1e-6)
    assert summary["area"] == pytest.approx(math.pi, abs=1e-6)
    assert summary["energy"] == pytest.approx(2.0, abs=1e-6)
    assert summary["trace_drift"] <= 1e-12
    assert "rho22_at_t_control" not in summary
    for name in ("trajectory.csv", "occupation.csv", "simulate.json", "provenance.json"):
        assert (tmp_path / name).exists()


def test_simulate_terminal_reports_t_control(tmp_path):
    config = write_config(
        tmp_path,
        """
[grid]
t0 = 0.0
t1 = 3.141592653589793
n = 257

[pulse]
kind = "constant"
t_control = 3.141592653589793

[fitness]
kind = "terminal_upper"
t_control = 3.141592653589793
""",
    )
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "simulate.json")
    assert summary["rho22_at_t_control"] == pytest.approx(1.0, abs=1e-8)


def test_simulate_zero_pulse_has_no_ratio(tmp_path):
    config = write_config(tmp_path, '[pulse]\nkind = "zero"\n')
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "simulate.json")
    assert summary["Q22"] == 0.0
    assert summary["adiabaticity_ratio"] is None


def test_simulate_reads_csv_relative_to_cwd(tmp_path, monkeypatch):
    t = np.linspace(-10.0, 10.0, 201)
    lines = ["t,V"] + [f"{a:.17g},{b:.17g}" for a, b in zip(t, 1.0 / np.cosh(t))]
    (tmp_path / "pulse.csv").write_text("\n".join(lines) + "\n")
    config = write_config(tmp_path, '[grid]\nt0 = -10.0\nt1 = 10.0\nn = 201\n\n[pulse]\nkind = "csv"\npath = "pulse.csv"\n')
    monkeypatch.chdir(tmp_path)
    assert main.main(["simulate", config, "--out", str(tmp_path / "out")]) == 0
    assert read_json(tmp_path / "out" / "simulate.json")["area"] == pytest.approx(math.pi, abs=1e-3)


# --- fig1 ---

def test_fig1_ratio(tmp_path):
    assert main.main(["fig1", "--out", str(tmp_path)]) == 0
    result = read_json(tmp_path / "fig1.json")
    assert result["Q22_soliton"] == pytest.approx(2.0, abs=1e-6)
    assert result["Q22_square"] == pytest.approx(math.pi**2 / 4, abs=1e-5)
    assert result["ratio"] == pytest.approx(8 / math.pi**2, rel=1e-5)
    for name in ("soliton", "square"):
        assert (tmp_path / f"fig1_{name}_envelope.csv").exists()
        assert (tmp_path / f"fig1_{name}_occupation.csv").exists()


# --- fig2 / morse ---

def test_fig2_with_mass(tmp_path):
    assert main.main(["fig2", "--mass", str(OH_MASS), "--out", str(tmp_path)]) == 0
    result = read_json(tmp_path / "fig2.json")
    assert result["rho22_at_t_control"] >= 1.0 - 1e-6
    assert result["area_identity"] == pytest.approx(math.pi / 2, rel=1e-12)
    assert result["energy_identity"] == pytest.approx(math.pi**2, rel=1e-12)
    assert result["provenance"]["overrides"]["mass"] == OH_MASS


def test_fig2_reference_envelope(tmp_path):
    t = np.linspace(0.0, 30000.0, 301)
    v = np.full(301, 1e-4)
    lines = ["t,V"] + [f"{a:.17g},{b:.17g}" for a, b in zip(t, v)]
    ref = tmp_path / "ref.csv"
    ref.write_text("\n".join(lines) + "\n")
    args = ["fig2", "--mass", str(OH_MASS), "--reference", str(ref), "--out", str(tmp_path)]
    assert main.main(args) == 0
    reference = read_json(tmp_path / "fig2.json")["reference"]
    assert reference["energy"] == pytest.approx(1e-8 * 30000.0, rel=1e-12)
    assert reference["energy_ratio"] > 0


def test_fig2_without_mass_is_config_error(tmp_path):
    assert main.main(["fig2", "--out", str(tmp_path)]) == 2


def test_morse_command(tmp_path):
    assert main.main(["morse", "--mass", str(OH_MASS), "--out", str(tmp_path)]) == 0
    result = read_json(tmp_path / "morse.json")
    assert result["bound_states"] == 22
    np.testing.assert_allclose(result["energies"], result["analytic_energies"], atol=1e-6)
    assert result["mu"] > 0
    header = (tmp_path / "morse_wavefunctions.csv").read_text().splitlines()[0]
    assert header == "r,psi0,psi1"


def test_morse_with_single_bound_state_is_config_error(tmp_path, capsys):
    assert main.main(["morse", "--mass", "2", "--out", str(tmp_path)]) == 2
    assert "supports 1" in capsys.readouterr().err


def test_morse_mass_from_config(tmp_path):
    config = write_config(tmp_path, f"[morse]\nmass = {OH_MASS}\n")
    assert main.main(["morse", config, "--out", str(tmp_path)]) == 0


# --- optimize ---

def test_optimize_is_reproducible(tmp_path):
    config = write_config(tmp_path, SMALL_OPTIMIZE)
    assert main.main(["optimize", config, "--out", str(tmp_path / "a")]) == 0
    assert main.main(["optimize", config, "--out", str(tmp_path / "b")]) == 0
    a = tmp_path / "a" / "optimize_envelope.csv"
    b = tmp_path / "b" / "optimize_envelope.csv"
    assert a.read_bytes() == b.read_bytes()
    report = read_json(tmp_path / "a" / "optimize_report.json")
    assert report["seed"] == 9
    assert report["energy"] == pytest.approx(2.0, rel=1e-12)
    assert report["area"] == pytest.approx(math.pi, rel=1e-9)


def test_optimize_seed_flag_overrides_config(tmp_path):
    config = write_config(tmp_path, SMALL_OPTIMIZE)
    assert main.main(["optimize", config, "--seed", "3", "--out", str(tmp_path)]) == 0
    report = read_json(tmp_path / "optimize_report.json")
    assert report["seed"] == 3
    assert report["provenance"]["overrides"] == {"seed": 3}


def test_optimize_envelope_csv_loads_back(tmp_path):
    config = write_config(tmp_path, SMALL_OPTIMIZE)
    assert main.main(["optimize", config, "--out", str(tmp_path)]) == 0
    env = read_envelope_csv(tmp_path / "optimize_envelope.csv")
    assert env.grid.n == 151
    area = (tmp_path / "optimize_area.csv").read_text().splitlines()
    assert area[0] == "t,theta"
    assert float(area[-1].split(",")[1]) == pytest.approx(math.pi, rel=1e-9)


def test_optimize_not_converged_exit_code(tmp_path):
    config = write_config(tmp_path, SMALL_OPTIMIZE + "require_convergence = true\n")
    def fake_optimize(prob):
        return OptimizationReport(
            envelope=Sampled(grid=prob.grid, values=np.ones(prob.grid.n)),
            fitness_history=[1.0],
            grad_norm_history=[1.0],
            converged=False,
            iterations=0,
            final_fitness=1.0,
            energy_multiplier=0.0,
            maximize=False,
            reason="max_iters",
        )

    with patch("main.optimize", side_effect=fake_optimize):
        assert main.main(["optimize", config, "--out", str(tmp_path)]) == 4


def test_optimize_not_converged_is_ok_without_requirement(tmp_path):
    config = write_config(tmp_path, SMALL_OPTIMIZE.replace("max_iters = 15", "max_iters = 1"))
    assert main.main(["optimize", config, "--out", str(tmp_path)]) == 0
    assert read_json(tmp_path / "optimize_report.json")["converged"] is False


# --- audit ---

def test_audit_terminal(tmp_path):
    config = write_config(
        tmp_path,
        """
[fitness]
kind = "terminal_upper"
t_control = 3.141592653589793

[audit]
n_trials = 10
""",
    )
    assert main.main(["audit", config, "--out", str(tmp_path)]) == 0
    result = read_json(tmp_path / "audit.json")
    assert result["passed"] is True
    assert result["n_trials"] == 10
    rows = (tmp_path / "audit.csv").read_text().splitlines()
    assert rows[0] == "trial,delta"
    assert len(rows) == 11


def test_audit_failure_exit_code(tmp_path):
    config = write_config(tmp_path, "[audit]\nn_trials = 2\n")
    with patch("twolevel.optimizer.AuditTable.passed", return_value=False):
        assert main.main(["audit", config, "--out", str(tmp_path)]) == 3


# --- configuration errors / provenance ---

def test_missing_config_file(tmp_path):
    assert main.main(["simulate", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_invalid_toml(tmp_path):
    config = write_config(tmp_path, "[grid\nn = 3\n")
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 2


def test_unknown_key_rejected(tmp_path):
    config = write_config(tmp_path, "[grid]\nsteps = 10\n")
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 2


def test_invalid_physics_rejected(tmp_path):
    config = write_config(tmp_path, "[system]\nmu = -1.0\n")
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 2


def test_t_control_outside_grid_rejected(tmp_path):
    config = write_config(tmp_path, '[fitness]\nkind = "terminal_upper"\nt_control = 500.0\n')
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 2


def test_manifest_hashes_outputs(tmp_path):
    config = write_config(tmp_path, '[output]\nprefix = "run1_"\n')
    assert main.main(["simulate", config, "--out", str(tmp_path)]) == 0
    manifest = read_json(tmp_path / "provenance.json")
    assert set(manifest["files"]) == {"run1_trajectory.csv", "run1_occupation.csv", "run1_simulate.json"}
    for name, digest in manifest["files"].items():
        assert file_sha256(tmp_path / name) == digest
    assert manifest["provenance"]["command"] == "simulate"
    assert len(manifest["provenance"]["config_hash"]) == 64


def test_no_command_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main.main([])
    assert excinfo.value.code == 2
