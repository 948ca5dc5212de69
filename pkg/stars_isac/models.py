"""
This file defines what the data looks like.

Each class is one value type shared between modules. Configuration types
(SystemConfig, Scenario, ExperimentConfig) validate their fields at
construction; result types carrying numpy arrays are frozen containers.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ===== PHYSICAL CONSTANTS =====
LIGHT_SPEED = 299_792_458.0
CARRIER_HZ = 28e9
LAMBDA_28GHZ = LIGHT_SPEED / CARRIER_HZ


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def rate_threshold_from_db(db: float) -> float:
    """Rate threshold given in dB of bit/s/Hz, e.g. 0 dB -> 1 bit/s/Hz."""
    return 10.0 ** (db / 10.0)


# ===== ENUMS =====

class ArrayKind(str, Enum):
    BS = "BS"
    STAR = "STAR"
    SENSOR = "SENSOR"


class Axis(str, Enum):
    RANGE = "RANGE"
    ANGLE = "ANGLE"


class FimMethod(str, Enum):
    EXACT = "EXACT"
    CLOSED_FORM = "CLOSED_FORM"
    FD_ORACLE = "FD_ORACLE"


class SolveStatus(str, Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"
    MAX_ITER = "MAX_ITER"


class Scheme(str, Enum):
    PROPOSED = "PROPOSED"
    RANDM = "RANDM"
    CONRIS = "CONRIS"
    CONISAC = "CONISAC"


class SweepVariable(str, Enum):
    P_MAX = "p_max"          # dBm
    M = "m_star"             # STAR element count
    NOISE = "noise"          # dBm
    M_R = "m_sensor"         # fixed sensor count
    D_S = "d_s"              # fixed sensor interval [m]


class Experiment(str, Enum):
    VALIDATE_SPEB = "validate-speb"
    CONVERGENCE = "convergence"
    SWEEP = "sweep"
    RMSE = "rmse"


# ===== GEOMETRY =====

class SystemConfig(BaseModel):
    """Array geometry and physical constants."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_bs: int = Field(16, ge=2, description="BS antenna count N (N+1 elements)")
    m_star: int = Field(16, ge=2, description="STAR element count M (M+1 elements)")
    m_sensor: int = Field(16, ge=2, description="sensor count M_r (M_r+1 elements)")
    d_b: float = Field(LAMBDA_28GHZ / 2, gt=0)
    d_r: float = Field(LAMBDA_28GHZ / 2, gt=0)
    d_s: float = Field(LAMBDA_28GHZ / 2, gt=0)
    h_a: float = Field(0.05, ge=0)
    r_br: float = Field(5.0, gt=0)
    lambda_c: float = Field(LAMBDA_28GHZ, gt=0)
    literal_bs_phase: bool = False
    d_min: float | None = Field(None, gt=0)

    @field_validator("n_bs", "m_star", "m_sensor")
    @classmethod
    def _even_count(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"counts must be even (symmetric index set), got {v}")
        return v

    @model_validator(mode="after")
    def _deployment_fits_aperture(self) -> "SystemConfig":
        if self.m_sensor * self.d_s > self.m_star * self.d_r * (1 + 1e-9):
            raise ValueError(
                f"sensor aperture {self.m_sensor * self.d_s:.4g} m exceeds "
                f"STAR aperture {self.m_star * self.d_r:.4g} m"
            )
        return self

    @property
    def min_interval(self) -> float:
        return self.d_min if self.d_min is not None else self.lambda_c / 2

    @property
    def aperture(self) -> float:
        return self.m_star * self.d_r

    def with_deployment(self, m_sensor: int, d_s: float) -> "SystemConfig":
        """Copy with a new sensor deployment, re-validated."""
        return SystemConfig.model_validate({**self.model_dump(), "m_sensor": m_sensor, "d_s": d_s})


class PolarPosition(BaseModel):
    model_config = ConfigDict(frozen=True)

    r: float = Field(..., gt=0)
    theta: float

    def to_cartesian(self) -> "CartesianPosition":
        return CartesianPosition(p_x=self.r * math.cos(self.theta), p_y=self.r * math.sin(self.theta))


class CartesianPosition(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_x: float
    p_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y])


class Scenario(BaseModel):
    """Positions, reflection coefficient, noise, budget and cost weights."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    st: PolarPosition
    cu: PolarPosition
    alpha_s: complex
    sigma2: float = Field(..., gt=0)
    l_slots: int = Field(32, ge=1)
    p_max: float = Field(..., gt=0)
    r_min: float = Field(1.0, ge=0)
    omega0: float = Field(0.5, gt=0, lt=1)
    eps0: float = Field(1e-5, gt=0)
    m0: int = Field(16, ge=1)

    @property
    def rate_factor(self) -> float:
        """2^R_min - 1, the SINR the rate constraint demands."""
        return 2.0 ** self.r_min - 1.0


# ===== NUMERIC RESULT TYPES =====

class _ArrayModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class SteeringVector(_ArrayModel):
    entries: np.ndarray
    r: float
    theta: float
    count: int
    interval: float
    lambda_c: float


class ChannelSet(_ArrayModel):
    h_br: np.ndarray   # (M+1) x (N+1)
    g_c: np.ndarray    # (M+1,)


class FimReport(_ArrayModel):
    j_polar: np.ndarray    # index 0 = theta, index 1 = r
    speb: float = Field(..., ge=0)
    offdiag_ratio: float
    method: FimMethod

    @property
    def is_diagonal(self) -> bool:
        return self.j_polar[0, 1] == 0.0 and self.j_polar[1, 0] == 0.0


class CorrelationFactors(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float
    b1: float
    b2: float
    c: float


class StarsProfile(_ArrayModel):
    """
    Transmit/reflect coefficients of the STARS.

    Vectors q_l give Theta_l = diag(q_l). The optimization works on
    big_q_l = conj(q_l) conj(q_l)^H, which may be of any rank while
    Algorithm 2 runs.
    """

    q_r: np.ndarray
    q_t: np.ndarray
    big_q_r: np.ndarray
    big_q_t: np.ndarray
    rank_one: bool = True

    @classmethod
    def from_vectors(cls, q_r: np.ndarray, q_t: np.ndarray) -> "StarsProfile":
        q_r = np.asarray(q_r, dtype=complex)
        q_t = np.asarray(q_t, dtype=complex)
        energy = np.abs(q_r) ** 2 + np.abs(q_t) ** 2
        if np.any(energy > 1 + 1e-9):
            raise ValueError(f"energy split violated, max |q_r|^2+|q_t|^2 = {energy.max():.6g}")
        return cls(q_r=q_r, q_t=q_t,
                   big_q_r=np.outer(q_r.conj(), q_r), big_q_t=np.outer(q_t.conj(), q_t))

    @classmethod
    def uniform(cls, count: int) -> "StarsProfile":
        """Equal energy split, zero phases, on count+1 elements."""
        amp = np.full(count + 1, math.sqrt(2) / 2, dtype=complex)
        return cls.from_vectors(amp, amp.copy())

    @property
    def theta_r(self) -> np.ndarray:
        return np.diag(self.q_r)

    @property
    def theta_t(self) -> np.ndarray:
        return np.diag(self.q_t)


class BeamSolution(_ArrayModel):
    r_s0: np.ndarray       # dedicated sensing covariance
    v_big: np.ndarray      # C&S covariance
    v_c: np.ndarray        # recovered beam (zeros before recovery)
    u_mat: np.ndarray      # 2x2 auxiliary, SPEB = tr(U^-1) at the optimum
    objective: float = float("nan")

    @property
    def rx(self) -> np.ndarray:
        return self.r_s0 + self.v_big

    @property
    def power(self) -> float:
        return float(np.real(np.trace(self.rx)))


class PenaltyState(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho: float = Field(..., gt=0)
    c_shrink: float = Field(0.5, gt=0, lt=1)
    penalty_value: float = Field(..., ge=0)


class DeployCoeffs(BaseModel):
    """J11 = c11 d~ + c10 and J22 = c2 d~^2 - c1 d~ + c0 with d~ = d_s^2."""

    model_config = ConfigDict(frozen=True)

    c11: float = Field(..., ge=0)
    c10: float = Field(..., ge=0)
    c0: float
    c1: float
    c2: float = Field(..., ge=0)
    b0: float
    b1: float
    b2: float
    m_r: int
    d_s: float
    t11: float = Field(1.0, gt=0)   # SPEB weights, SPEB = t11/J11 + t22/J22
    t22: float = Field(1.0, gt=0)

    def diagonal(self, d_tilde: float) -> tuple[float, float]:
        j11 = self.c11 * d_tilde + self.c10
        j22 = self.c2 * d_tilde ** 2 - self.c1 * d_tilde + self.c0
        return j11, j22

    def speb(self, d_tilde: float) -> float:
        j11, j22 = self.diagonal(d_tilde)
        if j11 <= 0 or j22 <= 0:
            return math.inf
        return self.t11 / j11 + self.t22 / j22


class DeploymentPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_s: float = Field(..., gt=0)
    m_r: int = Field(..., ge=2)
    cf_value: float = float("nan")
    speb_value: float = float("nan")
    iterations: int = 0
    gp_fallback: bool = False


class EchoBlock(_ArrayModel):
    y_s: np.ndarray        # (M_r+1) x L
    x_bar: np.ndarray      # (N+1) x L transmitted block
    seed: int
    truth: PolarPosition


class SolveReport(_ArrayModel):
    status: SolveStatus
    objective: float
    values: dict[str, Any] = Field(default_factory=dict)
    duality_gap: float = float("nan")
    iterations: int = 0
    solver: str = ""


# ===== EXPERIMENTS =====

class SolverSettings(BaseModel):
    """Tolerances and iteration caps for Algorithms 1-3."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eps: float = Field(1e-5, gt=0)
    eps1: float = Field(1e-8, gt=0)
    penalty_tol: float = Field(1e-5, gt=0)
    sdp_tol: float | None = Field(None, gt=0)
    gp_tol: float | None = Field(None, gt=0)
    solver: str | None = Field(None, pattern="^(CLARABEL|SCS)$")
    ao_max_iter: int = Field(15, ge=1)
    alg1_max_iter: int = Field(20, ge=1)
    sca_max_iter: int = Field(50, ge=1)
    gp_max_iter: int = Field(50, ge=1)
    bf_inner_max: int = Field(20, ge=1)
    bf_outer_max: int = Field(30, ge=1)
    rho0_factor: float = Field(10.0, gt=0)
    c_shrink: float = Field(0.5, gt=0, lt=1)


class ScenarioTemplate(BaseModel):
    """Scenario parameters shared by every Monte Carlo trial."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    st_center_x: float = 0.0
    st_center_y: float = 3.0
    r_sen: float = Field(1.0, ge=0)
    angle_min_deg: float = Field(45.0, gt=0, lt=180)
    angle_max_deg: float = Field(135.0, gt=0, lt=180)
    cu_range: float = Field(1.5, gt=0)
    sigma2_dbm: float = -90.0
    p_max_dbm: float = 30.0
    l_slots: int = Field(32, ge=1)
    r_min_db: float = 0.0
    omega0: float = Field(0.5, gt=0, lt=1)
    eps0: float = Field(1e-5, gt=0)
    m0: int | None = Field(None, ge=1)
    rcs: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _sector(self) -> "ScenarioTemplate":
        if self.angle_min_deg >= self.angle_max_deg:
            raise ValueError("angle_min_deg must be below angle_max_deg")
        return self


class EstimatorGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    span_r: float = Field(0.2, gt=0)
    span_theta_deg: float = Field(4.0, gt=0)
    points_r: int = Field(41, ge=3)
    points_theta: int = Field(41, ge=3)
    exact_ranges: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "custom"
    experiment: Experiment = Experiment.SWEEP
    system: SystemConfig = Field(default_factory=SystemConfig)
    scenario: ScenarioTemplate = Field(default_factory=ScenarioTemplate)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    grid: EstimatorGrid = Field(default_factory=EstimatorGrid)
    sweep_variable: SweepVariable = SweepVariable.P_MAX
    sweep_values: list[float] = Field(default_factory=lambda: [30.0])
    trials: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    schemes: list[Scheme] = Field(default_factory=lambda: [Scheme.PROPOSED])
    output: str = "results"
    record_wall_time: bool = False

    @field_validator("sweep_values")
    @classmethod
    def _sorted_finite(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("sweep_values must not be empty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("sweep_values must be finite")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("sweep_values must be sorted ascending")
        return v


class TrialRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: str
    sweep_value: float
    seed: int
    cf: float
    speb: float
    rate: float
    m_r: int
    d_s: float
    iterations: int
    wall_time: float
    status: str = "ok"
