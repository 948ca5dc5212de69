"""
Command-line tests.

 Group 1 - Help and argument validation
 Group 2 - Experiment subcommands write their CSV files
 Group 3 - solve and selftest
 Group 4 - Solver settings from the environment
"""

from types import SimpleNamespace

import pytest
from click.testing import CliRunner

from stars_isac import bench, cli
from stars_isac import settings as settings_module
from stars_isac.bench import TRIAL_HEADER
from stars_isac.models import SolverSettings, TrialRecord
from stars_isac.settings import Settings, solver_defaults

MINI_TOML = """
[experiment]
name = "mini"
experiment = "validate-speb"
sweep_variable = "m_sensor"
sweep_values = [2.0, 4.0]
trials = 2
seed = 1

[system]
n_bs = 2
m_star = 4
m_sensor = 4

[scenario]
st_center_y = 1.0
r_sen = 0.3
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def mini_config(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINI_TOML, encoding="utf-8")
    return path


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_help_lists_subcommands(runner):
    result = runner.invoke(cli.main, ["--help"])
    assert result.exit_code == 0
    for name in ("validate-speb", "convergence", "sweep-power", "sweep-elements", "rmse", "solve", "selftest"):
        assert name in result.output


def test_unknown_preset_is_a_usage_error(runner):
    result = runner.invoke(cli.main, ["sweep-power", "--preset", "fig-99"])
    assert result.exit_code == 2


def test_experiment_kind_mismatch(runner, mini_config, tmp_path):
    result = runner.invoke(cli.main, ["sweep-power", "--config", str(mini_config), "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "validate-speb" in result.output


def test_missing_config_file(runner, tmp_path):
    result = runner.invoke(cli.main, ["validate-speb", "--config", str(tmp_path / "nope.toml")])
    assert result.exit_code == 1
    assert "ConfigError" in result.output


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_validate_speb_writes_results(runner, mini_config, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli.main, ["validate-speb", "--config", str(mini_config), "--out", str(out),
                                      "--threads", "2"])
    assert result.exit_code == 0, result.output
    assert "8 records (0 failed)" in result.output
    trials = (out / "mini_trials.csv").read_text(encoding="utf-8").splitlines()
    assert trials[0] == TRIAL_HEADER
    assert len(trials) == 9
    assert (out / "mini_aggregate.csv").exists()


def test_seed_and_trials_override_the_config(runner, mini_config, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli.main, ["validate-speb", "--config", str(mini_config), "--out", str(out),
                                      "--seed", "40", "--trials", "1"])
    assert result.exit_code == 0, result.output
    rows = (out / "mini_trials.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert len(rows) == 4
    assert {row.split(",")[2] for row in rows} == {"40"}


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_solve_prints_summary_and_trace(runner, tmp_path, monkeypatch):
    trace = [SimpleNamespace(iteration=1, cf=1.2, speb=2.4, rate=1.4),
             SimpleNamespace(iteration=2, cf=1.0, speb=2.0, rate=1.5)]
    fake = SimpleNamespace(cf=1.0, speb=2.0, rate=1.5, plan=SimpleNamespace(m_r=4, d_s=0.005),
                           iterations=2, trace=trace)
    calls = []

    def fake_run_scheme(scheme, system, scn, seed, settings):
        calls.append((scheme, seed))
        return fake

    monkeypatch.setattr(cli, "run_scheme", fake_run_scheme)
    result = runner.invoke(cli.main, ["solve", "--scheme", "CONRIS", "--seed", "3", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "scheme=CONRIS cf=1 " in result.output
    assert calls[0][0].value == "CONRIS" and calls[0][1] == 3
    rows = (tmp_path / "power-sweep_solve_trials.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 3


def test_selftest_pass_and_fail(runner, tmp_path, monkeypatch):
    monkeypatch.setattr(bench, "selftest_checks", lambda seed=0: [("toy", 0.0, 1.0, True)])
    result = runner.invoke(cli.main, ["selftest", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "selftest.csv").read_text(encoding="utf-8").splitlines()[1] == "toy,0,1,true"

    monkeypatch.setattr(bench, "selftest_checks", lambda seed=0: [("toy", 2.0, 1.0, False)])
    result = runner.invoke(cli.main, ["selftest", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "selftest failed" in result.output


# ── Group 4 ───────────────────────────────────────────────────────────────────

@pytest.fixture
def scs_settings(monkeypatch):
    chosen = Settings(solver="SCS", sdp_tol=1e-6, gp_tol=1e-7)
    monkeypatch.setattr(settings_module, "get_settings", lambda: chosen)
    return chosen


def test_solve_takes_solver_knobs_from_the_environment(runner, scs_settings, monkeypatch):
    seen = []

    def fake_run_scheme(scheme, system, scn, seed, settings):
        seen.append(settings)
        return SimpleNamespace(cf=1.0, speb=2.0, rate=1.5, plan=SimpleNamespace(m_r=4, d_s=0.005),
                               iterations=1, trace=[])

    monkeypatch.setattr(cli, "run_scheme", fake_run_scheme)
    result = runner.invoke(cli.main, ["solve"])
    assert result.exit_code == 0, result.output
    assert seen[0].solver == "SCS"
    assert seen[0].sdp_tol == pytest.approx(1e-6)
    assert seen[0].gp_tol == pytest.approx(1e-7)


def test_experiments_take_solver_knobs_from_the_environment(runner, mini_config, tmp_path, scs_settings,
                                                            monkeypatch):
    seen = []

    def fake_montecarlo(cfg, threads, progress):
        seen.append(cfg.solver)
        return [TrialRecord(scheme="PROPOSED", sweep_value=2.0, seed=1, cf=1.0, speb=1.0, rate=1.0, m_r=2,
                            d_s=0.005, iterations=1, wall_time=0.0)]

    monkeypatch.setattr(cli, "run_montecarlo", fake_montecarlo)
    result = runner.invoke(cli.main, ["validate-speb", "--config", str(mini_config), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert seen[0].solver == "SCS"
    assert seen[0].sdp_tol == pytest.approx(1e-6)


def test_config_solver_wins_over_the_environment(scs_settings):
    requested = SolverSettings(solver="CLARABEL", sdp_tol=1e-9)
    filled = solver_defaults(requested)
    assert filled.solver == "CLARABEL"
    assert filled.sdp_tol == pytest.approx(1e-9)
    assert filled.gp_tol == pytest.approx(1e-7)
