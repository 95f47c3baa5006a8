import math

import numpy as np
import pytest
from pydantic import ValidationError

from tests.conftest import OH_MASS
from twolevel.config import (
    PulseSection,
    RunConfig,
    config_hash,
    load_run_config,
    settings,
)
from twolevel.errors import ConfigError
from twolevel.fitness import IntegratedUpper, TerminalUpper
from twolevel.pulses import Constant, Sampled, Soliton, Square


def write_config(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


# --- settings ---

def test_settings_read_from_environment():
    assert settings.LOG_LEVEL == "WARNING"
    assert settings.SUBSTEPS == 4
    assert settings.MORSE_NR == 4096


# --- RunConfig defaults ---

def test_defaults_describe_the_soliton_run():
    cfg = RunConfig()
    assert cfg.two_level_system().mu == 1.0
    grid = cfg.time_grid()
    assert (grid.t0, grid.t1, grid.n) == (-50.0, 50.0, 4001)
    assert cfg.fitness_spec() == IntegratedUpper()
    env, budget = cfg.envelope()
    assert isinstance(env, Soliton)
    assert budget.e0 == 2.0
    assert cfg.integrator_config().substeps == settings.SUBSTEPS


# --- load_run_config ---

def test_load_full_config(tmp_path):
    path = write_config(
        tmp_path,
        """
[system]
mu = 0.5
gamma1 = 0.1
gamma2 = 0.2

[grid]
t0 = 0.0
t1 = 10.0
n = 101

[pulse]
kind = "square"
energy = 1.5
area = 2.0

[fitness]
kind = "terminal_upper"
t_control = 7.5

[integrator]
substeps = 2
dt_max = 0.01

[output]
prefix = "x_"
""",
    )
    cfg = load_run_config(path)
    assert cfg.two_level_system().gamma2 == 0.2
    assert cfg.fitness_spec() == TerminalUpper(t_control=7.5)
    assert cfg.integrator_config().substeps_for(cfg.time_grid()) == 10
    env, budget = cfg.envelope()
    assert isinstance(env, Square)
    assert 0.5 * env.amplitude * env.duration == pytest.approx(2.0)
    assert cfg.output.prefix == "x_"


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.toml")


def test_bad_toml_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, "mu = = 1"))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_run_config(write_config(tmp_path, "[laser]\npower = 1\n"))


def test_config_is_frozen():
    with pytest.raises(ValidationError):
        RunConfig().grid.n = 3


# --- PulseSection ---

@pytest.mark.parametrize(
    "fields",
    [{"kind": "soliton"}, {"kind": "square"}, {"kind": "constant"}, {"kind": "csv"}],
)
def test_pulse_kinds_need_their_fields(fields):
    with pytest.raises(ValidationError):
        PulseSection(**fields)


def test_terminal_fitness_needs_time():
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"fitness": {"kind": "terminal_upper"}})


def test_constant_pulse_brings_its_budget():
    cfg = RunConfig.model_validate({"pulse": {"kind": "constant", "t_control": math.pi}})
    env, budget = cfg.envelope()
    assert isinstance(env, Constant)
    assert budget.e0 == pytest.approx(math.pi / 4)


def test_nsoliton_budget_scales_with_order():
    cfg = RunConfig.model_validate({"pulse": {"kind": "nsoliton", "order": 3}})
    env, budget = cfg.envelope()
    assert env.order == 3
    assert budget.e0 == pytest.approx(18.0)


def test_zero_pulse_is_sampled_on_grid():
    cfg = RunConfig.model_validate({"pulse": {"kind": "zero"}, "grid": {"n": 11, "t0": 0.0, "t1": 1.0}})
    env, budget = cfg.envelope()
    assert isinstance(env, Sampled)
    assert budget is None
    assert not env.values.any()


def test_csv_pulse_relative_to_base_dir(tmp_path):
    (tmp_path / "v.csv").write_text("t,V\n0,0\n0.5,1\n1,0\n")
    cfg = RunConfig.model_validate({"pulse": {"kind": "csv", "path": "v.csv"}})
    env, _ = cfg.envelope(base_dir=tmp_path)
    np.testing.assert_array_equal(env.values, [0.0, 1.0, 0.0])


# --- morse_model ---

def test_morse_model_needs_mass():
    with pytest.raises(ConfigError):
        RunConfig().morse_model()


def test_morse_model_mass_argument_wins():
    cfg = RunConfig.model_validate({"morse": {"mass": 10.0, "stencil": 2}})
    assert cfg.morse_model(OH_MASS).mass == OH_MASS
    assert cfg.morse_model().mass == 10.0
    assert cfg.morse_model().stencil == 2


# --- optimization_problem ---

def test_optimization_problem_defaults():
    prob = RunConfig().optimization_problem()
    assert prob.pinned_area == math.pi
    assert prob.init is None
    assert prob.seed == 0


def test_optimization_problem_from_pulse_without_area():
    cfg = RunConfig.model_validate(
        {"optimizer": {"init": "pulse", "target_area": "none", "seed": 4}, "grid": {"n": 201}}
    )
    prob = cfg.optimization_problem(seed=8)
    assert prob.pinned_area is None
    assert prob.seed == 8
    assert prob.init.values[100] == pytest.approx(1.0)


def test_optimization_problem_explicit_area():
    cfg = RunConfig.model_validate({"optimizer": {"target_area": 2.5}})
    assert cfg.optimization_problem().pinned_area == 2.5


def test_optimization_problem_memory():
    assert RunConfig.model_validate({}).optimization_problem().memory == 8
    cfg = RunConfig.model_validate({"optimizer": {"memory": 0}})
    assert cfg.optimization_problem().memory == 0


def test_optimization_needs_budget():
    cfg = RunConfig.model_validate({"pulse": {"kind": "zero"}})
    with pytest.raises(ConfigError):
        cfg.optimization_problem()


# --- config_hash ---

def test_config_hash_is_stable_and_sensitive():
    a = RunConfig()
    b = RunConfig.model_validate({})
    c = RunConfig.model_validate({"optimizer": {"seed": 1}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64
