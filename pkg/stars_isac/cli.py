"""
Command-line entry point.

    python -m stars_isac sweep-power --trials 5 --out results/
    python -m stars_isac solve --preset convergence --scheme CONRIS
    python -m stars_isac selftest

Every experiment subcommand starts from its preset, or from a TOML file
given with --config, then applies --seed/--trials/--out.
"""

import functools
import logging

import click
from pydantic import ValidationError

from .bench import (
    apply_sweep,
    draw_scenario,
    emit_results,
    load_config,
    run_montecarlo,
    run_scheme,
    run_selftest,
    with_overrides,
)
from .conic import enable_dump
from .errors import StarsIsacError
from .models import Experiment, ExperimentConfig, Scheme, SweepVariable, TrialRecord
from .presets import PRESETS, get_preset
from .settings import configure_logging, get_settings, solver_defaults

logger = logging.getLogger(__name__)


def _library_errors(fn):
    """Turn library errors into a one-line diagnostic and a nonzero exit."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (StarsIsacError, ValidationError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    return wrapper


def _experiment_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="TOML experiment file; replaces the preset."),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
                     help="Preset to start from."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--seed", type=click.IntRange(min=0), default=None),
        click.option("--trials", type=click.IntRange(min=1), default=None),
        click.option("--threads", type=click.IntRange(min=1), default=None,
                     help="Worker threads (default STARS_THREADS)."),
        click.option("--progress/--no-progress", default=False),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _resolve_config(config_path: str | None, preset: str | None, default_preset: str,
                    seed: int | None, trials: int | None, out: str | None) -> ExperimentConfig:
    cfg = load_config(config_path) if config_path else get_preset(preset or default_preset)
    if out is None and "output" not in cfg.model_fields_set:
        out = get_settings().output_dir
    cfg = with_overrides(cfg, seed=seed, trials=trials, output=out)
    return cfg.model_copy(update={"solver": solver_defaults(cfg.solver)})


def _run_experiment(expected: Experiment, default_preset: str, config_path, preset, out, seed,
                    trials, threads, progress, sweep: SweepVariable | None = None) -> None:
    cfg = _resolve_config(config_path, preset, default_preset, seed, trials, out)
    if cfg.experiment is not expected:
        raise click.UsageError(f"config {cfg.name!r} is a {cfg.experiment.value} experiment, "
                               f"not {expected.value}")
    if sweep is not None and cfg.sweep_variable is not sweep:
        raise click.UsageError(f"config {cfg.name!r} sweeps {cfg.sweep_variable.value}, not {sweep.value}")
    records = run_montecarlo(cfg, threads or get_settings().threads, progress)
    trial_path, agg_path = emit_results(records, cfg.output, cfg.name)
    failed = sum(r.status != "ok" for r in records)
    click.echo(f"{len(records)} records ({failed} failed)")
    click.echo(str(trial_path))
    click.echo(str(agg_path))


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="DEBUG logging.")
@click.option("--dump-dir", type=click.Path(file_okay=False), default=None,
              help="Write the text form of every SDP/GP here.")
def main(verbose: bool, dump_dir: str | None) -> None:
    """Sensor deployment and beamforming for STARS-aided near-field sensing."""
    configure_logging("DEBUG" if verbose else None)
    enable_dump(dump_dir)


@main.command("validate-speb")
@_experiment_options
@_library_errors
def validate_speb(config_path, preset, out, seed, trials, threads, progress):
    """Exact vs closed-form SPEB over the sensor count."""
    _run_experiment(Experiment.VALIDATE_SPEB, "speb-validation", config_path, preset, out, seed,
                    trials, threads, progress)


@main.command()
@_experiment_options
@_library_errors
def convergence(config_path, preset, out, seed, trials, threads, progress):
    """cf per alternating-optimization iteration."""
    _run_experiment(Experiment.CONVERGENCE, "convergence", config_path, preset, out, seed,
                    trials, threads, progress)


@main.command("sweep-power")
@_experiment_options
@_library_errors
def sweep_power(config_path, preset, out, seed, trials, threads, progress):
    """All schemes over the transmit power budget."""
    _run_experiment(Experiment.SWEEP, "power-sweep", config_path, preset, out, seed,
                    trials, threads, progress, sweep=SweepVariable.P_MAX)


@main.command("sweep-elements")
@_experiment_options
@_library_errors
def sweep_elements(config_path, preset, out, seed, trials, threads, progress):
    """All schemes over the STAR element count."""
    _run_experiment(Experiment.SWEEP, "element-sweep", config_path, preset, out, seed,
                    trials, threads, progress, sweep=SweepVariable.M)


@main.command()
@_experiment_options
@_library_errors
def rmse(config_path, preset, out, seed, trials, threads, progress):
    """ML and MUSIC squared error against the bound over the noise power."""
    _run_experiment(Experiment.RMSE, "rmse-noise", config_path, preset, out, seed,
                    trials, threads, progress)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="power-sweep")
@click.option("--scheme", type=click.Choice([s.value for s in Scheme]), default=Scheme.PROPOSED.value)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Also write the iteration trace here.")
@_library_errors
def solve(config_path, preset, scheme, seed, out):
    """Full joint optimization on one scenario at the first sweep value."""
    cfg = load_config(config_path) if config_path else get_preset(preset)
    cfg = with_overrides(cfg, seed=seed)
    value = cfg.sweep_values[0]
    system, tpl = apply_sweep(cfg, value)
    scn = draw_scenario(tpl, system, cfg.seed)
    sol = run_scheme(Scheme(scheme), system, scn, cfg.seed, solver_defaults(cfg.solver))
    click.echo(f"scheme={scheme} cf={sol.cf:.6g} speb={sol.speb:.6g} rate={sol.rate:.4g} "
               f"m_r={sol.plan.m_r} d_s={sol.plan.d_s:.6g} iterations={sol.iterations}")
    if out is not None:
        rows = [TrialRecord(scheme=scheme, sweep_value=float(row.iteration), seed=cfg.seed, cf=row.cf,
                            speb=row.speb, rate=row.rate, m_r=sol.plan.m_r, d_s=sol.plan.d_s,
                            iterations=row.iteration, wall_time=0.0) for row in sol.trace]
        trial_path, _ = emit_results(rows, out, f"{cfg.name}_solve")
        click.echo(str(trial_path))


@main.command()
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=0)
@_library_errors
def selftest(out, seed):
    """Oracle checks: FIM vs finite differences, closed form, conic toys."""
    path, passed = run_selftest(out or get_settings().output_dir, seed)
    click.echo(str(path))
    if not passed:
        raise click.ClickException(f"selftest failed, see {path}")


if __name__ == "__main__":
    main()
