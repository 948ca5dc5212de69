"""Named experiment configurations, one per study the CLI can reproduce."""

from .errors import ConfigError
from .models import (
    EstimatorGrid,
    Experiment,
    ExperimentConfig,
    Scheme,
    SweepVariable,
    SystemConfig,
)

ALL_SCHEMES = [Scheme.PROPOSED, Scheme.RANDM, Scheme.CONRIS, Scheme.CONISAC]


def speb_validation() -> ExperimentConfig:
    """Exact vs closed-form SPEB as the sensor count grows, fixed interval lambda/2."""
    return ExperimentConfig(
        name="speb-validation",
        experiment=Experiment.VALIDATE_SPEB,
        sweep_variable=SweepVariable.M_R,
        sweep_values=[2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
        trials=20,
        seed=3,
    )


def convergence() -> ExperimentConfig:
    """cf trace of the alternating optimization for every scheme, one scenario."""
    return ExperimentConfig(
        name="convergence",
        experiment=Experiment.CONVERGENCE,
        sweep_values=[30.0],
        trials=1,
        seed=4,
        schemes=ALL_SCHEMES,
    )


def power_sweep() -> ExperimentConfig:
    return ExperimentConfig(
        name="power-sweep",
        experiment=Experiment.SWEEP,
        sweep_variable=SweepVariable.P_MAX,
        sweep_values=[20.0, 25.0, 30.0, 35.0, 40.0],
        trials=20,
        seed=5,
        schemes=ALL_SCHEMES,
    )


def element_sweep() -> ExperimentConfig:
    """STAR element count sweep; the sensor count follows M."""
    return ExperimentConfig(
        name="element-sweep",
        experiment=Experiment.SWEEP,
        system=SystemConfig(m_star=8, m_sensor=8),
        sweep_variable=SweepVariable.M,
        sweep_values=[8.0, 12.0, 16.0, 20.0],
        trials=20,
        seed=6,
        schemes=ALL_SCHEMES,
    )


def rmse_noise() -> ExperimentConfig:
    """ML and MUSIC error against the bound at three noise powers."""
    return ExperimentConfig(
        name="rmse-noise",
        experiment=Experiment.RMSE,
        sweep_variable=SweepVariable.NOISE,
        sweep_values=[-100.0, -90.0, -80.0],
        trials=200,
        seed=7,
        grid=EstimatorGrid(span_r=0.4, span_theta_deg=6.0, points_r=61, points_theta=61),
    )


PRESETS = {
    "speb-validation": speb_validation,
    "convergence": convergence,
    "power-sweep": power_sweep,
    "element-sweep": element_sweep,
    "rmse-noise": rmse_noise,
}


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
