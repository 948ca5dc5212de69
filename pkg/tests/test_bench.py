"""
Monte Carlo harness tests.

 Group 1 - Scenario drawing and sweep application
 Group 2 - Benchmark schemes and random sensor count
 Group 3 - CSV emission and aggregation
 Group 4 - TOML config loading and overrides
 Group 5 - Experiment runs: determinism, scheme ordering
 Group 6 - Presets
"""

import math

import numpy as np
import pytest

from stars_isac import bench
from stars_isac.bench import (
    AGGREGATE_HEADER,
    TRIAL_HEADER,
    aggregate,
    apply_sweep,
    draw_scenario,
    emit_results,
    load_config,
    run_montecarlo,
    run_selftest,
    with_overrides,
)
from stars_isac.beamform import aligned_profile, max_rate
from stars_isac.channel import channel_set
from stars_isac.errors import ConfigError
from stars_isac.models import (
    Experiment,
    ExperimentConfig,
    ScenarioTemplate,
    Scheme,
    SolverSettings,
    SweepVariable,
    SystemConfig,
    TrialRecord,
)
from stars_isac.presets import PRESETS, get_preset

TINY = SystemConfig(n_bs=2, m_star=4, m_sensor=4, h_a=0.05)
NEAR = ScenarioTemplate(st_center_y=1.0, r_sen=0.3, l_slots=16)
QUIET = NEAR.model_copy(update={"sigma2_dbm": -110.0})


def _record(scheme="PROPOSED", value=30.0, seed=0, cf=1.0, status="ok"):
    return TrialRecord(scheme=scheme, sweep_value=value, seed=seed, cf=cf, speb=2 * cf, rate=1.5,
                       m_r=4, d_s=0.005, iterations=3, wall_time=0.0, status=status)


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_draw_scenario_is_deterministic():
    assert draw_scenario(NEAR, TINY, 17) == draw_scenario(NEAR, TINY, 17)
    assert draw_scenario(NEAR, TINY, 17) != draw_scenario(NEAR, TINY, 18)


@pytest.mark.parametrize("seed", range(20))
def test_draw_scenario_respects_disk_and_sector(seed):
    tpl = ScenarioTemplate(st_center_x=0.5, st_center_y=2.0, r_sen=1.0, angle_min_deg=60, angle_max_deg=120)
    scn = draw_scenario(tpl, TINY, seed)
    p = scn.st.to_cartesian()
    assert math.hypot(p.p_x - 0.5, p.p_y - 2.0) <= 1.0 + 1e-12
    assert math.radians(60) <= scn.st.theta <= math.radians(120)
    assert scn.cu.r == tpl.cu_range
    assert math.radians(60) <= scn.cu.theta <= math.radians(120)


def test_draw_scenario_units():
    scn = draw_scenario(ScenarioTemplate(), TINY, 0)
    assert scn.sigma2 == pytest.approx(1e-12)
    assert scn.p_max == pytest.approx(1.0)
    assert scn.r_min == pytest.approx(1.0)
    assert scn.m0 == TINY.m_star


def test_draw_scenario_fails_when_disk_misses_sector():
    tpl = ScenarioTemplate(st_center_x=3.0, st_center_y=0.5, r_sen=0.2, angle_min_deg=80, angle_max_deg=100)
    with pytest.raises(ConfigError):
        draw_scenario(tpl, TINY, 0)


def test_apply_sweep_power_and_noise():
    cfg = ExperimentConfig(sweep_variable=SweepVariable.P_MAX, sweep_values=[25.0])
    _, tpl = apply_sweep(cfg, 25.0)
    assert tpl.p_max_dbm == 25.0
    cfg = ExperimentConfig(sweep_variable=SweepVariable.NOISE, sweep_values=[-80.0])
    _, tpl = apply_sweep(cfg, -80.0)
    assert tpl.sigma2_dbm == -80.0


def test_apply_sweep_elements_carries_the_sensor_count():
    cfg = ExperimentConfig(system=SystemConfig(m_star=8, m_sensor=8), sweep_variable=SweepVariable.M,
                           sweep_values=[12.0])
    system, _ = apply_sweep(cfg, 12.0)
    assert system.m_star == 12 and system.m_sensor == 12


def test_apply_sweep_sensor_count():
    cfg = ExperimentConfig(system=SystemConfig(m_star=8, m_sensor=8), sweep_variable=SweepVariable.M_R,
                           sweep_values=[6.0])
    system, _ = apply_sweep(cfg, 6.0)
    assert system.m_sensor == 6
    with pytest.raises(ConfigError):
        apply_sweep(cfg, 10.0)


# ── Group 2 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(3))
def test_random_count_benchmark(seed, monkeypatch):
    captured = {}

    def fake_algorithm3(scn, cfg, init=None, settings=None, scheme=None, optimize_deployment=True):
        captured.update(cfg=cfg, init=init, scheme=scheme, optimize=optimize_deployment)
        return "solved"

    monkeypatch.setattr(bench, "run_algorithm3", fake_algorithm3)
    system = SystemConfig(n_bs=2, m_star=8, m_sensor=8)
    scn = draw_scenario(NEAR, system, seed)
    assert bench.run_scheme(Scheme.RANDM, system, scn, seed) == "solved"
    m_r = captured["init"].m_r
    assert m_r % 2 == 0 and 2 <= m_r <= system.m_star
    assert captured["init"].d_s == pytest.approx(system.lambda_c / 2)
    assert captured["cfg"].m_sensor == m_r
    assert captured["scheme"] is Scheme.RANDM and captured["optimize"] is False
    bench.run_scheme(Scheme.RANDM, system, scn, seed)
    assert captured["init"].m_r == m_r


@pytest.mark.parametrize("scheme", [Scheme.PROPOSED, Scheme.CONRIS, Scheme.CONISAC])
def test_benchmark_dispatch(scheme, monkeypatch):
    captured = {}

    def fake_algorithm3(scn, cfg, init=None, settings=None, scheme=None, optimize_deployment=True):
        captured.update(cfg=cfg, scheme=scheme, optimize=optimize_deployment)
        return "solved"

    monkeypatch.setattr(bench, "run_algorithm3", fake_algorithm3)
    scn = draw_scenario(NEAR, TINY, 0)
    assert bench.run_scheme(scheme, TINY, scn, 0) == "solved"
    assert captured == {"cfg": TINY, "scheme": scheme, "optimize": True}


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_emit_results_writes_both_files(tmp_path):
    records = [_record(seed=1, cf=1.0), _record(seed=0, cf=3.0),
               _record(seed=2, cf=math.nan, status="failed:InfeasibleError")]
    trials, agg = emit_results(records, tmp_path, "demo")
    lines = trials.read_text(encoding="utf-8").splitlines()
    assert lines[0] == TRIAL_HEADER
    assert len(lines) == 4
    assert lines[1].split(",")[2] == "0"
    assert lines[3].endswith("failed:InfeasibleError")

    agg_lines = agg.read_text(encoding="utf-8").splitlines()
    assert agg_lines[0] == AGGREGATE_HEADER
    row = agg_lines[1].split(",")
    assert row[:4] == ["PROPOSED", "30", "3", "1"]
    assert float(row[4]) == pytest.approx(2.0)
    assert float(row[5]) == pytest.approx(4.0)


def test_emit_results_is_order_independent(tmp_path):
    records = [_record(seed=s, cf=float(s + 1)) for s in range(4)]
    a = emit_results(records, tmp_path / "a", "x")
    b = emit_results(list(reversed(records)), tmp_path / "b", "x")
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_aggregate_groups_by_scheme_and_value():
    records = [_record("A", 1.0, cf=1.0), _record("A", 1.0, seed=1, cf=3.0), _record("B", 1.0, cf=5.0),
               _record("A", 2.0, cf=7.0)]
    agg = aggregate(records)
    assert list(agg.columns) == AGGREGATE_HEADER.split(",")
    assert list(zip(agg["scheme"], agg["sweep_value"], agg["trials"])) == [("A", 1.0, 2), ("A", 2.0, 1),
                                                                          ("B", 1.0, 1)]
    assert agg["mean_cf"].iloc[0] == pytest.approx(np.mean([1.0, 3.0]))
    assert agg["mean_m_r"].iloc[0] == pytest.approx(4.0)


def test_aggregate_of_all_failed_group_is_nan():
    agg = aggregate([_record(cf=math.nan, status="failed:SolverError")])
    assert agg["failed"].iloc[0] == 1 and math.isnan(agg["mean_cf"].iloc[0])


def test_aggregate_skips_failed_rows_in_means():
    agg = aggregate([_record(cf=2.0), _record(seed=1, cf=math.nan, status="failed:InfeasibleError")])
    assert agg["trials"].iloc[0] == 2 and agg["failed"].iloc[0] == 1
    assert agg["mean_cf"].iloc[0] == pytest.approx(2.0)


def test_emit_results_refuses_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_results([], tmp_path, "empty")


# ── Group 4 ───────────────────────────────────────────────────────────────────

def test_load_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        '[experiment]\nname = "mini"\nexperiment = "validate-speb"\nsweep_variable = "m_sensor"\n'
        'sweep_values = [2.0, 4.0]\ntrials = 2\nseed = 9\n\n'
        '[system]\nn_bs = 2\nm_star = 4\nm_sensor = 4\n\n'
        '[scenario]\nst_center_y = 1.0\nr_sen = 0.3\n',
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.name == "mini"
    assert cfg.experiment is Experiment.VALIDATE_SPEB
    assert cfg.sweep_variable is SweepVariable.M_R
    assert cfg.system.m_star == 4
    assert cfg.scenario.r_sen == 0.3
    assert cfg.trials == 2 and cfg.seed == 9


@pytest.mark.parametrize("text", [
    "[plotting]\ndpi = 300\n",
    "[system]\nantennas = 4\n",
    "[experiment]\nsweep_values = [3.0, 1.0]\n",
    "[system]\nm_star = 5\n",
    "[experiment\nname = 1\n",
])
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_with_overrides():
    cfg = ExperimentConfig()
    assert with_overrides(cfg, seed=None) is cfg
    assert with_overrides(cfg, seed=4, trials=2).seed == 4
    with pytest.raises(ConfigError):
        with_overrides(cfg, trials=0)


# ── Group 5 ───────────────────────────────────────────────────────────────────

@pytest.fixture
def validation_cfg():
    return ExperimentConfig(name="mini", experiment=Experiment.VALIDATE_SPEB, system=TINY, scenario=NEAR,
                            sweep_variable=SweepVariable.M_R, sweep_values=[2.0, 4.0], trials=3, seed=5)


def test_validation_run_is_deterministic_across_threads(validation_cfg, tmp_path):
    serial = run_montecarlo(validation_cfg, threads=1)
    pooled = run_montecarlo(validation_cfg, threads=2)
    assert serial == pooled
    assert len(serial) == 2 * 3 * 2
    a = emit_results(serial, tmp_path / "a", "mini")
    b = emit_results(pooled, tmp_path / "b", "mini")
    assert a[0].read_bytes() == b[0].read_bytes()


def test_validation_closed_form_bounds_exact(validation_cfg):
    records = run_montecarlo(validation_cfg)
    assert all(r.status == "ok" for r in records)
    exact = {(r.sweep_value, r.seed): r.speb for r in records if r.scheme == "EXACT"}
    closed = {(r.sweep_value, r.seed): r.speb for r in records if r.scheme == "CLOSED_FORM"}
    assert exact.keys() == closed.keys()
    for key, value in closed.items():
        assert 0 < value <= exact[key] * (1 + 1e-9)
    assert {r.seed for r in records} == {5, 6, 7}


def test_bad_sweep_point_fails_before_any_trial(validation_cfg):
    cfg = validation_cfg.model_copy(update={"sweep_values": [2.0, 40.0]})
    with pytest.raises(ConfigError):
        run_montecarlo(cfg)


def test_failed_trials_are_recorded(validation_cfg, monkeypatch):
    def boom(*args, **kwargs):
        raise bench.StarsIsacError("forced")

    monkeypatch.setattr(bench, "exact_fim", boom)
    cfg = validation_cfg.model_copy(update={"sweep_values": [4.0], "trials": 1})
    records = run_montecarlo(cfg)
    statuses = {r.scheme: r.status for r in records}
    assert statuses == {"CLOSED_FORM": "ok", "EXACT": "failed:StarsIsacError"}


def test_proposed_beats_the_benchmarks_on_average():
    settings = SolverSettings(ao_max_iter=3, bf_outer_max=5, bf_inner_max=5, alg1_max_iter=5)
    cfg = ExperimentConfig(name="order", experiment=Experiment.SWEEP, system=TINY, scenario=QUIET,
                           solver=settings, sweep_variable=SweepVariable.P_MAX, sweep_values=[25.0, 35.0],
                           trials=20, seed=100, schemes=list(Scheme))
    records = run_montecarlo(cfg, threads=4)
    assert [r for r in records if r.status != "ok"] == []

    agg = aggregate(records).set_index(["scheme", "sweep_value"])
    for value in cfg.sweep_values:
        proposed = agg.loc[("PROPOSED", value), "mean_cf"]
        for scheme in ("RANDM", "CONISAC", "CONRIS"):
            assert proposed <= agg.loc[(scheme, value), "mean_cf"], (scheme, value)
    assert agg.loc[("PROPOSED", 35.0), "mean_speb"] <= agg.loc[("PROPOSED", 25.0), "mean_speb"]


def test_selftest_output_is_byte_identical(tmp_path):
    first, _ = run_selftest(tmp_path / "a", seed=0)
    second, _ = run_selftest(tmp_path / "b", seed=0)
    assert first.read_bytes() == second.read_bytes()


def test_convergence_run_files_are_byte_identical(tmp_path):
    quick = SolverSettings(ao_max_iter=3, bf_outer_max=3, bf_inner_max=3, alg1_max_iter=5)
    cfg = ExperimentConfig(name="conv", experiment=Experiment.CONVERGENCE, system=TINY, scenario=QUIET,
                           solver=quick, trials=2, seed=9, schemes=[Scheme.PROPOSED, Scheme.CONRIS])
    a = emit_results(run_montecarlo(cfg, threads=1), tmp_path / "a", "conv")
    b = emit_results(run_montecarlo(cfg, threads=2), tmp_path / "b", "conv")
    for left, right in zip(a, b):
        assert left.read_bytes() == right.read_bytes()


# ── Group 6 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name):
    cfg = get_preset(name)
    assert cfg.name == name
    for value in cfg.sweep_values:
        apply_sweep(cfg, value)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset("fig-99")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_draws_can_meet_the_rate_target(name):
    cfg = get_preset(name)
    for value in cfg.sweep_values:
        system, tpl = apply_sweep(cfg, value)
        for seed in range(50):
            scn = draw_scenario(tpl, system, seed)
            chans = channel_set(system, scn.cu)
            for conventional in (False, True):
                profile = aligned_profile(chans, system.m_star, conventional)
                assert max_rate(profile, chans, scn) > scn.r_min, (value, seed, conventional)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_produce_usable_rows(name):
    cfg = get_preset(name)
    ends = sorted({cfg.sweep_values[0], cfg.sweep_values[-1]})
    quick = SolverSettings(ao_max_iter=2, bf_outer_max=2, bf_inner_max=2, alg1_max_iter=3)
    cfg = with_overrides(cfg, trials=1, sweep_values=ends, solver=quick)
    records = run_montecarlo(cfg, threads=4)
    assert records
    assert [r for r in records if r.status != "ok"] == []
