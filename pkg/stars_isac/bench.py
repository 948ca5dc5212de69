"""
Monte Carlo harness: scenario drawing, benchmark schemes, experiment
runners, TOML config loading and CSV result emission.

Every random draw is seeded from the experiment seed plus the trial index,
so a (config, seed) pair always produces the same files. Trials fan out
over a thread pool; records are sorted before they are written.
"""

import logging
import math
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Iterable

import cvxpy as cp
import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from .beamform import FullSolution, achievable_rate, run_algorithm3
from .channel import channel_set, reflection_coefficient
from .conic import GpProblem, SdpProblem, require_optimal, solve_gp, solve_sdp, tr_inverse_epigraph
from .deploy import cost_function, even_floor
from .errors import ConfigError, StarsIsacError
from .estimate import ml_estimate, music_estimate, squared_error, synthesize_echo
from .fim import closed_form_fim, exact_fim, fd_fim_oracle, literal_angle_entry, correlation_factors
from .geometry import polar_from_cartesian
from .models import (
    BeamSolution,
    CartesianPosition,
    DeploymentPlan,
    Experiment,
    ExperimentConfig,
    PolarPosition,
    Scenario,
    ScenarioTemplate,
    Scheme,
    SolverSettings,
    StarsProfile,
    SweepVariable,
    SystemConfig,
    TrialRecord,
    dbm_to_watt,
    rate_threshold_from_db,
)

logger = logging.getLogger(__name__)

TRIAL_HEADER = "scheme,sweep_value,seed,cf,speb,rate,m_r,d_s,iterations,wall_time,status"
AGGREGATE_HEADER = "scheme,sweep_value,trials,failed,mean_cf,mean_speb,mean_rate,mean_m_r,mean_d_s"
SELFTEST_HEADER = "check,value,threshold,passed"
CONFIG_SECTIONS = {"experiment", "system", "scenario", "solver", "grid"}

MAX_DRAWS = 10_000
RANDM_STREAM = 1    # second seed word, keeps the count draw apart from the scenario draw

# Errors a single trial may hit; anything else is a bug and propagates.
TRIAL_ERRORS = (StarsIsacError, ValidationError, np.linalg.LinAlgError)


# ===== SCENARIOS =====

def draw_scenario(tpl: ScenarioTemplate, cfg: SystemConfig, seed: int) -> Scenario:
    """
    ST uniform in the disk around the template centre, restricted to the
    angular sector; CU on the sector at the template range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = math.radians(tpl.angle_min_deg), math.radians(tpl.angle_max_deg)
    for _ in range(MAX_DRAWS):
        rad = tpl.r_sen * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * math.pi)
        p = CartesianPosition(p_x=tpl.st_center_x + rad * math.cos(phi),
                              p_y=tpl.st_center_y + rad * math.sin(phi))
        if p.p_y <= 0:
            continue
        st = polar_from_cartesian(p)
        if lo <= st.theta <= hi and st.r > cfg.h_a:
            break
    else:
        raise ConfigError("the ST disk does not intersect the angular sector")
    cu = PolarPosition(r=tpl.cu_range, theta=float(rng.uniform(lo, hi)))
    return Scenario(
        st=st,
        cu=cu,
        alpha_s=reflection_coefficient(st.r, cfg.lambda_c, tpl.rcs),
        sigma2=dbm_to_watt(tpl.sigma2_dbm),
        l_slots=tpl.l_slots,
        p_max=dbm_to_watt(tpl.p_max_dbm),
        r_min=rate_threshold_from_db(tpl.r_min_db),
        omega0=tpl.omega0,
        eps0=tpl.eps0,
        m0=tpl.m0 or cfg.m_star,
    )


def apply_sweep(cfg: ExperimentConfig, value: float) -> tuple[SystemConfig, ScenarioTemplate]:
    """System and scenario template at one sweep point."""
    system, tpl = cfg.system, cfg.scenario
    var = cfg.sweep_variable
    try:
        if var is SweepVariable.P_MAX:
            tpl = ScenarioTemplate.model_validate({**tpl.model_dump(), "p_max_dbm": value})
        elif var is SweepVariable.NOISE:
            tpl = ScenarioTemplate.model_validate({**tpl.model_dump(), "sigma2_dbm": value})
        elif var is SweepVariable.M:
            m = int(round(value))
            m_r = min(m, even_floor(m * system.d_r / system.d_s))
            system = SystemConfig.model_validate({**system.model_dump(), "m_star": m, "m_sensor": m_r})
        elif var is SweepVariable.M_R:
            system = system.with_deployment(int(round(value)), system.d_s)
        elif var is SweepVariable.D_S:
            system = system.with_deployment(system.m_sensor, value)
    except ValidationError as exc:
        raise ConfigError(f"sweep value {var.value}={value} is invalid: {exc}") from exc
    return system, tpl


# ===== SCHEMES =====

def scheme_proposed(cfg: SystemConfig, scn: Scenario, settings: SolverSettings | None = None) -> FullSolution:
    return run_algorithm3(scn, cfg, settings=settings, scheme=Scheme.PROPOSED)


def scheme_randm(cfg: SystemConfig, scn: Scenario, seed: int,
                 settings: SolverSettings | None = None) -> FullSolution:
    """Interval lambda/2, even sensor count uniform on [2, M], beamforming only."""
    rng = np.random.default_rng([seed, RANDM_STREAM])
    d_s = cfg.lambda_c / 2
    m_r = 2 * int(rng.integers(1, cfg.m_star // 2 + 1))
    m_r = min(m_r, even_floor(cfg.aperture / d_s))
    plan = DeploymentPlan(d_s=d_s, m_r=m_r)
    return run_algorithm3(scn, cfg.with_deployment(m_r, d_s), init=plan, settings=settings,
                          scheme=Scheme.RANDM, optimize_deployment=False)


def scheme_conris(cfg: SystemConfig, scn: Scenario, settings: SolverSettings | None = None) -> FullSolution:
    return run_algorithm3(scn, cfg, settings=settings, scheme=Scheme.CONRIS)


def scheme_conisac(cfg: SystemConfig, scn: Scenario, settings: SolverSettings | None = None) -> FullSolution:
    return run_algorithm3(scn, cfg, settings=settings, scheme=Scheme.CONISAC)


def run_scheme(scheme: Scheme, cfg: SystemConfig, scn: Scenario, seed: int,
               settings: SolverSettings | None = None) -> FullSolution:
    if scheme is Scheme.RANDM:
        return scheme_randm(cfg, scn, seed, settings)
    runner = {
        Scheme.PROPOSED: scheme_proposed,
        Scheme.CONRIS: scheme_conris,
        Scheme.CONISAC: scheme_conisac,
    }[scheme]
    return runner(cfg, scn, settings)


# ===== RECORDS =====

def _wall(cfg: ExperimentConfig, start: float) -> float:
    return time.perf_counter() - start if cfg.record_wall_time else 0.0


def _solution_record(scheme: str, value: float, seed: int, sol: FullSolution, wall: float) -> TrialRecord:
    return TrialRecord(scheme=scheme, sweep_value=value, seed=seed, cf=sol.cf, speb=sol.speb,
                       rate=sol.rate, m_r=sol.plan.m_r, d_s=sol.plan.d_s,
                       iterations=sol.iterations, wall_time=wall)


def _failed_record(scheme: str, value: float, seed: int, exc: Exception, wall: float) -> TrialRecord:
    logger.warning("trial %s value=%g seed=%d failed: %s", scheme, value, seed, exc)
    return TrialRecord(scheme=scheme, sweep_value=value, seed=seed, cf=math.nan, speb=math.nan,
                       rate=math.nan, m_r=0, d_s=math.nan, iterations=0, wall_time=wall,
                       status=f"failed:{type(exc).__name__}")


def initial_beam(cfg: SystemConfig, scn: Scenario) -> tuple[BeamSolution, StarsProfile]:
    """Isotropic covariance P/(N+1) I on the sensing part and a uniform energy split."""
    n = cfg.n_bs + 1
    zero = np.zeros((n, n), dtype=complex)
    sol = BeamSolution(r_s0=(scn.p_max / n) * np.eye(n, dtype=complex), v_big=zero,
                       v_c=np.zeros(n, dtype=complex), u_mat=np.eye(2))
    return sol, StarsProfile.uniform(cfg.m_star)


# ===== EXPERIMENT JOBS =====

def _sweep_job(cfg: ExperimentConfig, value: float, trial: int) -> list[TrialRecord]:
    seed = cfg.seed + trial
    system, tpl = apply_sweep(cfg, value)
    scn = draw_scenario(tpl, system, seed)
    out = []
    for scheme in cfg.schemes:
        start = time.perf_counter()
        try:
            sol = run_scheme(scheme, system, scn, seed, cfg.solver)
        except TRIAL_ERRORS as exc:
            out.append(_failed_record(scheme.value, value, seed, exc, _wall(cfg, start)))
            continue
        out.append(_solution_record(scheme.value, value, seed, sol, _wall(cfg, start)))
    return out


def _validate_job(cfg: ExperimentConfig, value: float, trial: int) -> list[TrialRecord]:
    """Exact and closed-form SPEB at the initial beamformer."""
    seed = cfg.seed + trial
    system, tpl = apply_sweep(cfg, value)
    scn = draw_scenario(tpl, system, seed)
    sol, profile = initial_beam(system, scn)
    rate = achievable_rate(sol, profile, channel_set(system, scn.cu), scn.sigma2)
    out = []
    for name, fn in (("EXACT", exact_fim), ("CLOSED_FORM", closed_form_fim)):
        start = time.perf_counter()
        try:
            rep = fn(sol.rx, profile, scn.st, scn, system)
        except TRIAL_ERRORS as exc:
            out.append(_failed_record(name, value, seed, exc, _wall(cfg, start)))
            continue
        status = "ok" if math.isfinite(rep.speb) else "failed:UnobservableError"
        out.append(TrialRecord(scheme=name, sweep_value=value, seed=seed,
                               cf=cost_function(rep.speb, system.m_sensor, scn), speb=rep.speb,
                               rate=rate, m_r=system.m_sensor, d_s=system.d_s, iterations=0,
                               wall_time=_wall(cfg, start), status=status))
    return out


def _convergence_job(cfg: ExperimentConfig, value: float, trial: int) -> list[TrialRecord]:
    """One row per AO iteration; the sweep column holds the iteration index."""
    seed = cfg.seed + trial
    system, tpl = apply_sweep(cfg, value)
    scn = draw_scenario(tpl, system, seed)
    out = []
    for scheme in cfg.schemes:
        start = time.perf_counter()
        try:
            sol = run_scheme(scheme, system, scn, seed, cfg.solver)
        except TRIAL_ERRORS as exc:
            out.append(_failed_record(scheme.value, 0.0, seed, exc, _wall(cfg, start)))
            continue
        wall = _wall(cfg, start)
        for row in sol.trace:
            out.append(TrialRecord(scheme=scheme.value, sweep_value=float(row.iteration), seed=seed,
                                   cf=row.cf, speb=row.speb, rate=row.rate, m_r=sol.plan.m_r,
                                   d_s=sol.plan.d_s, iterations=row.iteration, wall_time=wall))
    return out


def _rmse_solve(cfg: ExperimentConfig, value: float) -> list:
    """Beamformer and bound at one noise level; the ST stays fixed across trials."""
    system, tpl = apply_sweep(cfg, value)
    scn = draw_scenario(tpl, system, cfg.seed)
    try:
        sol = scheme_proposed(system, scn, cfg.solver)
        bound = exact_fim(sol.solution.rx, sol.profile, scn.st, scn, sol.cfg).speb
    except TRIAL_ERRORS as exc:
        return [(value, scn, exc, math.nan)]
    return [(value, scn, sol, bound)]


def _rmse_job(cfg: ExperimentConfig, value: float, scn: Scenario, sol: FullSolution,
              bound: float, trial: int) -> list[TrialRecord]:
    seed = cfg.seed + 1 + trial
    block = synthesize_echo(sol.solution, sol.profile, scn.st, scn, sol.cfg, seed,
                            exact=cfg.grid.exact_ranges)
    out = []
    for name in ("ML", "MUSIC"):
        start = time.perf_counter()
        try:
            if name == "ML":
                est = ml_estimate(block, cfg.grid, sol.solution, sol.profile, sol.cfg, scn)
            else:
                est = music_estimate(block, cfg.grid, sol.cfg, scn)
        except (*TRIAL_ERRORS, ValueError) as exc:
            out.append(_failed_record(name, value, seed, exc, _wall(cfg, start)))
            continue
        out.append(TrialRecord(scheme=name, sweep_value=value, seed=seed, cf=squared_error(est, scn.st),
                               speb=bound, rate=sol.rate, m_r=sol.plan.m_r, d_s=sol.plan.d_s,
                               iterations=sol.iterations, wall_time=_wall(cfg, start)))
    return out


def _parallel(fn: Callable[..., list], jobs: Iterable[tuple], threads: int, desc: str,
              progress: bool) -> list:
    jobs = list(jobs)
    results: list = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        for fut in tqdm(as_completed(futures), total=len(futures), desc=desc, disable=not progress):
            results.extend(fut.result())
    return results


def _sort_key(rec: TrialRecord) -> tuple:
    return rec.scheme, rec.sweep_value, rec.seed, rec.iterations


def _rmse_records(cfg: ExperimentConfig, threads: int, progress: bool) -> list[TrialRecord]:
    solved = _parallel(lambda v: _rmse_solve(cfg, v), [(v,) for v in cfg.sweep_values],
                       threads, "beamformers", progress)
    records, jobs = [], []
    for value, scn, sol, bound in solved:
        if isinstance(sol, Exception):
            for name in ("ML", "MUSIC", "BOUND"):
                records.append(_failed_record(name, value, cfg.seed, sol, 0.0))
            continue
        records.append(TrialRecord(scheme="BOUND", sweep_value=value, seed=cfg.seed, cf=bound,
                                   speb=bound, rate=sol.rate, m_r=sol.plan.m_r, d_s=sol.plan.d_s,
                                   iterations=sol.iterations, wall_time=0.0))
        jobs += [(value, scn, sol, bound, t) for t in range(cfg.trials)]
    records += _parallel(lambda *a: _rmse_job(cfg, *a), jobs, threads, "estimates", progress)
    return records


def run_montecarlo(cfg: ExperimentConfig, threads: int = 1, progress: bool = False) -> list[TrialRecord]:
    """
    Run every (sweep value, trial) job of the experiment and return the
    records sorted by scheme, sweep value and seed.
    """
    for value in cfg.sweep_values:
        apply_sweep(cfg, value)   # fail fast on a bad sweep point
    logger.info("experiment %s: %s over %d values x %d trials", cfg.name, cfg.experiment.value,
                len(cfg.sweep_values), cfg.trials)

    if cfg.experiment is Experiment.RMSE:
        records = _rmse_records(cfg, threads, progress)
    else:
        job = {
            Experiment.SWEEP: _sweep_job,
            Experiment.VALIDATE_SPEB: _validate_job,
            Experiment.CONVERGENCE: _convergence_job,
        }[cfg.experiment]
        pairs = [(v, t) for v in cfg.sweep_values for t in range(cfg.trials)]
        records = _parallel(lambda v, t: job(cfg, v, t), pairs, threads, cfg.name, progress)

    records.sort(key=_sort_key)
    failed = sum(r.status != "ok" for r in records)
    if failed:
        logger.warning("%d of %d records failed", failed, len(records))
    return records


# ===== EMISSION =====

CSV_OPTIONS = dict(index=False, float_format="%.12g", na_rep="nan", lineterminator="\n")
MEAN_COLUMNS = ["cf", "speb", "rate", "m_r", "d_s"]


def _to_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, encoding="utf-8", **CSV_OPTIONS)


def trial_frame(records: list[TrialRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in sorted(records, key=_sort_key)])
    return frame[TRIAL_HEADER.split(",")]


def aggregate(records: list[TrialRecord]) -> pd.DataFrame:
    """Per (scheme, sweep value) means over the successful trials."""
    frame = trial_frame(records).assign(failed=lambda f: f["status"] != "ok")
    keys = ["scheme", "sweep_value"]
    counts = frame.groupby(keys, sort=True).agg(trials=("failed", "size"), failed=("failed", "sum"))
    means = (frame[~frame["failed"]].groupby(keys, sort=True)[MEAN_COLUMNS]
             .mean().astype(float).add_prefix("mean_"))
    out = counts.join(means, how="left").reset_index()
    return out[AGGREGATE_HEADER.split(",")]


def emit_results(records: list[TrialRecord], out_dir: str | Path, name: str) -> tuple[Path, Path]:
    """Write `<name>_trials.csv` and `<name>_aggregate.csv` under out_dir."""
    if not records:
        raise ValueError("no records to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trial_path = out / f"{name}_trials.csv"
    agg_path = out / f"{name}_aggregate.csv"
    _to_csv(trial_frame(records), trial_path)
    _to_csv(aggregate(records), agg_path)
    logger.info("wrote %s and %s", trial_path, agg_path)
    return trial_path, agg_path


# ===== CONFIG FILES =====

def load_config(path: str | Path) -> ExperimentConfig:
    """
    Read a TOML experiment file. Top-level keys live in `[experiment]`;
    the other sections map onto the nested models. Unknown keys fail.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc

    unknown = set(raw) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    data = dict(raw.get("experiment", {}))
    for section in CONFIG_SECTIONS - {"experiment"}:
        if section in raw:
            if section in data:
                raise ConfigError(f"[{section}] given twice")
            data[section] = raw[section]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def with_overrides(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    """Copy with the non-None updates applied, re-validated."""
    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return cfg
    try:
        return ExperimentConfig.model_validate({**cfg.model_dump(), **updates})
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {exc}") from exc


# ===== SELFTEST =====

def _selftest_instance(seed: int) -> tuple[SystemConfig, Scenario, np.ndarray, StarsProfile]:
    cfg = SystemConfig(n_bs=4, m_star=4, m_sensor=4, h_a=0.0)
    scn = draw_scenario(ScenarioTemplate(st_center_y=1.0, r_sen=0.3, l_slots=16), cfg, seed)
    rng = np.random.default_rng([seed, 2])
    x_bar = (rng.standard_normal((cfg.n_bs + 1, scn.l_slots))
             + 1j * rng.standard_normal((cfg.n_bs + 1, scn.l_slots))) / math.sqrt(2)
    return cfg, scn, x_bar, StarsProfile.uniform(cfg.m_star)


def selftest_checks(seed: int = 0) -> list[tuple[str, float, float, bool]]:
    """(check, value, threshold, passed) for the oracle suite."""
    cfg, scn, x_bar, profile = _selftest_instance(seed)
    rx = x_bar @ x_bar.conj().T / x_bar.shape[1]
    exact = exact_fim(rx, profile, scn.st, scn, cfg)
    fd = fd_fim_oracle(x_bar, profile, scn.st, scn, cfg)
    closed = closed_form_fim(rx, profile, scn.st, scn, cfg)
    checks = []

    fim_err = float(np.linalg.norm(exact.j_polar - fd.j_polar) / np.linalg.norm(fd.j_polar))
    checks.append(("fim_oracle", fim_err, 1e-6, fim_err <= 1e-6))

    gap = abs(closed.speb - exact.speb) / exact.speb
    checks.append(("closed_form_gap", gap, 0.1, gap <= 0.1))

    factors = correlation_factors(rx, profile, scn.st, cfg)
    err12 = abs(literal_angle_entry(factors, scn.st, scn, cfg, constant=12.0) - fd.j_polar[0, 0])
    err36 = abs(literal_angle_entry(factors, scn.st, scn, cfg, constant=36.0) - fd.j_polar[0, 0])
    ratio = err36 / err12 if err12 > 0 else math.inf
    checks.append(("constant_resolution", ratio, 2.0, ratio > 2.0))

    u = cp.Variable((2, 2), symmetric=True, name="u")
    _, cons, term = tr_inverse_epigraph(u)
    rep = require_optimal(solve_sdp(SdpProblem(name="selftest_trinv", objective=cp.Minimize(term),
                                               constraints=cons + [cp.trace(u) <= 2])), "trace-inverse toy")
    sdp_err = abs(rep.objective - 2.0)
    checks.append(("sdp_trace_inverse", sdp_err, 1e-6, sdp_err <= 1e-6))

    x = cp.Variable(pos=True, name="x")
    rep = require_optimal(solve_gp(GpProblem(name="selftest_gp", objective=cp.Minimize(x + 1 / x),
                                             constraints=[x <= 10])), "posynomial toy")
    gp_err = abs(rep.objective - 2.0)
    checks.append(("gp_posynomial", gp_err, 1e-6, gp_err <= 1e-6))
    return checks


def run_selftest(out_dir: str | Path, seed: int = 0) -> tuple[Path, bool]:
    checks = selftest_checks(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "selftest.csv"
    frame = pd.DataFrame(checks, columns=SELFTEST_HEADER.split(","))
    frame["passed"] = frame["passed"].map({True: "true", False: "false"})
    _to_csv(frame, path)
    for name, value, thr, ok in checks:
        log = logger.info if ok else logger.error
        log("selftest %s: %.3e (threshold %.1e) %s", name, value, thr, "ok" if ok else "FAILED")
    return path, all(ok for *_, ok in checks)
