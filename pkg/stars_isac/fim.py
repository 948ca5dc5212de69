"""
Fisher information and SPEB.

Polar parameters are ordered (theta, r): entry (0, 0) is the angle block,
entry (1, 1) the range block. The exact FIM is the trace form
J_xy = (2|alpha_s|^2 L / sigma^2) Re tr(R_Xr A_x^H A_y); the closed form
keeps its diagonal, written through the correlation factors a, b1, b2, c.
"""

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict

from .channel import bs_stars_channel, sensor_steering, star_steering, steering_derivative
from .errors import OracleStepError, UnobservableError
from .geometry import effective_range, jacobian_T, polar_from_cartesian, t_hat
from .models import (
    Axis,
    CartesianPosition,
    CorrelationFactors,
    FimMethod,
    FimReport,
    PolarPosition,
    Scenario,
    StarsProfile,
    SystemConfig,
)

logger = logging.getLogger(__name__)

FACTOR_NAMES = ("a", "b1", "b2", "c")
# c is twice the real part of its bilinear form
FACTOR_SCALE = {"a": 1.0, "b1": 1.0, "b2": 1.0, "c": 2.0}


# ===== INDEX VECTORS =====

def index_vectors(count: int) -> tuple[np.ndarray, np.ndarray]:
    if count < 2 or count % 2:
        raise ValueError(f"count must be even and >= 2, got {count}")
    v1 = np.arange(-(count // 2), count // 2 + 1, dtype=float)
    return v1, v1 ** 2


def norm_v1_sq(count: int) -> float:
    return count * (count + 1) * (count + 2) / 12


def norm_v2_sq(count: int) -> float:
    return count * (count + 1) * (count + 2) * (3 * count ** 2 + 6 * count - 4) / 240


# ===== RESPONSE MATRIX =====

def assemble_A(st: PolarPosition, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A = alpha_r alpha_t^H with its derivatives w.r.t. theta and r."""
    sv_t = star_steering(st, cfg)
    sv_r = sensor_steering(st.r, st.theta, cfg)
    a_t, a_r = sv_t.entries, sv_r.entries
    kappa = st.r / sv_r.r   # d r_eff / d r

    A = np.outer(a_r, a_t.conj())
    dA_dtheta = (np.outer(steering_derivative(sv_r, Axis.ANGLE), a_t.conj())
                 + np.outer(a_r, steering_derivative(sv_t, Axis.ANGLE).conj()))
    dA_dr = (kappa * np.outer(steering_derivative(sv_r, Axis.RANGE), a_t.conj())
             + np.outer(a_r, steering_derivative(sv_t, Axis.RANGE).conj()))
    return A, dA_dtheta, dA_dr


def check_covariance(rx: np.ndarray, name: str = "rx") -> np.ndarray:
    rx = np.asarray(rx, dtype=complex)
    if rx.ndim != 2 or rx.shape[0] != rx.shape[1]:
        raise ValueError(f"{name} must be square, got shape {rx.shape}")
    scale = max(float(np.abs(np.trace(rx))), 1e-300)
    if np.max(np.abs(rx - rx.conj().T)) > 1e-9 * scale:
        raise ValueError(f"{name} is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (rx + rx.conj().T)).min() < -1e-9 * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return rx


def reflected_covariance(rx: np.ndarray, stars_r: StarsProfile, cfg: SystemConfig) -> np.ndarray:
    """Theta_r H R_x H^H Theta_r^H, written as Q_r^T (Hadamard) H R_x H^H."""
    h = bs_stars_channel(cfg)
    return stars_r.big_q_r.T * (h @ rx @ h.conj().T)


# ===== CONSTANTS SHARED WITH THE OPTIMIZERS =====

class FimConstants(BaseModel):
    """Scenario-level factors of the closed form, independent of the sensor deployment."""

    model_config = ConfigDict(frozen=True)

    k: float          # 2 |alpha_s|^2 L / sigma^2
    k_theta: float    # (2 pi sin(theta) / lambda)^2
    k_r: float        # (pi / lambda)^2
    kappa: float      # r / r_eff
    r: float
    r_eff: float
    d_r: float


class FimWeights(BaseModel):
    """J11 = w11_a a + w11_b1 b1, J22 = w22_a a - w22_c c + w22_b2 b2."""

    model_config = ConfigDict(frozen=True)

    w11_a: float
    w11_b1: float
    w22_a: float
    w22_c: float
    w22_b2: float

    def diagonal(self, f: CorrelationFactors) -> tuple[float, float]:
        j11 = self.w11_a * f.a + self.w11_b1 * f.b1
        j22 = self.w22_a * f.a - self.w22_c * f.c + self.w22_b2 * f.b2
        return j11, j22


def fim_constants(st: PolarPosition, scn: Scenario, cfg: SystemConfig) -> FimConstants:
    r_eff = effective_range(st.r, cfg.h_a)
    return FimConstants(
        k=2 * abs(scn.alpha_s) ** 2 * scn.l_slots / scn.sigma2,
        k_theta=(2 * math.pi * math.sin(st.theta) / cfg.lambda_c) ** 2,
        k_r=(math.pi / cfg.lambda_c) ** 2,
        kappa=st.r / r_eff,
        r=st.r,
        r_eff=r_eff,
        d_r=cfg.d_r,
    )


def fim_weights(consts: FimConstants, m_r: int, d_s: float) -> FimWeights:
    n1, n2, count = norm_v1_sq(m_r), norm_v2_sq(m_r), m_r + 1
    c = consts
    return FimWeights(
        w11_a=c.k * c.k_theta * n1 * d_s ** 2,
        w11_b1=c.k * c.k_theta * count * c.d_r ** 2,
        w22_a=c.k * c.k_r * c.kappa ** 2 * n2 * d_s ** 4 / c.r_eff ** 4,
        w22_c=c.k * c.k_r * c.kappa * n1 * d_s ** 2 * c.d_r ** 2 / (c.r_eff ** 2 * c.r ** 2),
        w22_b2=c.k * c.k_r * count * c.d_r ** 4 / c.r ** 4,
    )


def weights_for(st: PolarPosition, scn: Scenario, cfg: SystemConfig) -> FimWeights:
    return fim_weights(fim_constants(st, scn, cfg), cfg.m_sensor, cfg.d_s)


# ===== CORRELATION FACTORS =====

def sensing_vectors(st: PolarPosition, cfg: SystemConfig) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(w, u) pairs with factor = scale * Re(w^H R_Xr u)."""
    alpha = star_steering(st, cfg).entries
    v1, v2 = index_vectors(cfg.m_star)
    return {
        "a": (alpha, alpha),
        "b1": (v1 * alpha, v1 * alpha),
        "b2": (v2 * alpha, v2 * alpha),
        "c": (alpha, v2 * alpha),
    }


def correlation_factors(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition,
                        cfg: SystemConfig) -> CorrelationFactors:
    R = reflected_covariance(rx, stars_r, cfg)
    vals = {name: FACTOR_SCALE[name] * float(np.real(w.conj() @ R @ u))
            for name, (w, u) in sensing_vectors(st, cfg).items()}
    return CorrelationFactors(**vals)


def gamma_forms(big_q_r: np.ndarray, st: PolarPosition, cfg: SystemConfig) -> dict[str, np.ndarray]:
    """
    Transmit-side matrices G with factor = scale * Re tr(R_x G).

    G(w, u) = H^H diag(u) Q_r diag(w)^H H.
    """
    h = bs_stars_channel(cfg)
    out = {}
    for name, (w, u) in sensing_vectors(st, cfg).items():
        out[name] = h.conj().T @ (u[:, None] * big_q_r * w.conj()[None, :]) @ h
    return out


def upsilon_forms(rx: np.ndarray, st: PolarPosition, cfg: SystemConfig) -> dict[str, np.ndarray]:
    """
    STARS-side matrices Y with factor = scale * Re tr(Y Q_r).

    Y(w, u) = diag(w)^H H R_x H^H diag(u).
    """
    h = bs_stars_channel(cfg)
    m = h @ rx @ h.conj().T
    return {name: w.conj()[:, None] * m * u[None, :]
            for name, (w, u) in sensing_vectors(st, cfg).items()}


def _hermitian(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def _combine(forms: dict[str, np.ndarray], w: FimWeights) -> tuple[np.ndarray, np.ndarray]:
    h = {name: _hermitian(mat) for name, mat in forms.items()}
    m11 = w.w11_a * h["a"] + w.w11_b1 * h["b1"]
    m22 = w.w22_a * h["a"] - FACTOR_SCALE["c"] * w.w22_c * h["c"] + w.w22_b2 * h["b2"]
    return m11, m22


def fim_transmit_matrices(big_q_r: np.ndarray, st: PolarPosition, scn: Scenario,
                          cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian M11, M22 with J_ii = tr(R_x M_ii) (closed-form diagonal)."""
    return _combine(gamma_forms(big_q_r, st, cfg), weights_for(st, scn, cfg))


def fim_stars_matrices(rx: np.ndarray, st: PolarPosition, scn: Scenario,
                       cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian Y11, Y22 with J_ii = tr(Y_ii Q_r) (closed-form diagonal)."""
    return _combine(upsilon_forms(rx, st, cfg), weights_for(st, scn, cfg))


# ===== FIM =====

def _report(j: np.ndarray, st: PolarPosition, method: FimMethod) -> FimReport:
    j = 0.5 * (j + j.T)
    prod = j[0, 0] * j[1, 1]
    ratio = abs(j[0, 1]) / math.sqrt(prod) if prod > 0 else 0.0
    try:
        speb = _speb(j, st)
    except UnobservableError:
        speb = math.inf
    return FimReport(j_polar=j, speb=speb, offdiag_ratio=ratio, method=method)


def _speb(j: np.ndarray, st: PolarPosition) -> float:
    cond = np.linalg.cond(j) if np.all(np.isfinite(j)) else math.inf
    if not np.isfinite(cond) or cond > 1e14 or np.linalg.eigvalsh(j).min() <= 0:
        raise UnobservableError("Fisher information is singular", cond)
    return float(np.trace(np.linalg.solve(j, t_hat(jacobian_T(st)))))


def speb_from_fim(rep: FimReport, pos: CartesianPosition) -> float:
    """tr((T J T^T)^-1); for diagonal J this is the weighted sum of J_ii^-1."""
    return _speb(rep.j_polar, polar_from_cartesian(pos))


def speb_diagonal(j11: float, j22: float, st: PolarPosition) -> float:
    """SPEB for a diagonal FIM; +inf when either entry is non-positive."""
    if j11 <= 0 or j22 <= 0:
        return math.inf
    th = t_hat(jacobian_T(st))
    return th[0, 0] / j11 + th[1, 1] / j22


def exact_fim(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
              cfg: SystemConfig) -> FimReport:
    rx = check_covariance(rx)
    R = reflected_covariance(rx, stars_r, cfg)
    _, d_theta, d_r = assemble_A(st, cfg)
    derivs = (d_theta, d_r)
    pref = 2 * abs(scn.alpha_s) ** 2 * scn.l_slots / scn.sigma2
    j = np.empty((2, 2))
    for x in range(2):
        for y in range(2):
            j[x, y] = pref * np.real(np.trace(R @ derivs[x].conj().T @ derivs[y]))
    return _report(j, st, FimMethod.EXACT)


def closed_form_fim(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
                    cfg: SystemConfig) -> FimReport:
    factors = correlation_factors(check_covariance(rx), stars_r, st, cfg)
    j11, j22 = weights_for(st, scn, cfg).diagonal(factors)
    return _report(np.diag([j11, j22]), st, FimMethod.CLOSED_FORM)


def literal_angle_entry(factors: CorrelationFactors, st: PolarPosition, scn: Scenario,
                        cfg: SystemConfig, constant: float = 12.0, b_vector: int = 1) -> float:
    """
    The angle entry in its printed form, M_r factored out:
    (2|a_s|^2 pi^2 sin^2 L M_r / (3 s^2 l^2)) [(M_r+1)(M_r+2) d_s^2 a + constant d_R^2 b].

    Kept for the constant-resolution check; the library uses `weights_for`.
    """
    m = cfg.m_sensor
    b = factors.b1 if b_vector == 1 else factors.b2
    pref = (2 * abs(scn.alpha_s) ** 2 * math.pi ** 2 * math.sin(st.theta) ** 2 * scn.l_slots * m
            / (3 * scn.sigma2 * cfg.lambda_c ** 2))
    return pref * ((m + 1) * (m + 2) * cfg.d_s ** 2 * factors.a + constant * cfg.d_r ** 2 * b)


# ===== FINITE-DIFFERENCE ORACLE =====

def mean_echo(st: PolarPosition, x_bar: np.ndarray, stars_r: StarsProfile, scn: Scenario,
              cfg: SystemConfig, exact: bool = False) -> np.ndarray:
    """Noiseless echo alpha_s alpha_r alpha_t^H Theta_r H X, shape (M_r+1) x L."""
    a_t = star_steering(st, cfg, exact).entries
    a_r = sensor_steering(st.r, st.theta, cfg, exact).entries
    g = stars_r.q_r[:, None] * bs_stars_channel(cfg) @ x_bar
    return scn.alpha_s * np.outer(a_r, a_t.conj() @ g)


def fd_fim_oracle(x_bar: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
                  cfg: SystemConfig, step: float = 1e-5, check_tol: float = 1e-3) -> FimReport:
    """
    Reference FIM from central differences of the mean echo, one Richardson level.

    Uses the realized block X; it equals the trace form when R_x = X X^H / L.
    """
    x_bar = np.asarray(x_bar, dtype=complex)
    if (cfg.m_sensor + 1) * x_bar.shape[1] > 10_000:
        raise ValueError("instance too large for the finite-difference oracle")

    def mean(theta: float, r: float) -> np.ndarray:
        return mean_echo(PolarPosition(r=r, theta=theta), x_bar, stars_r, scn, cfg).ravel()

    base = mean(st.theta, st.r)
    steps = (step, step * st.r)

    def central(axis: int, h: float) -> np.ndarray:
        dx = (h, 0.0) if axis == 0 else (0.0, h)
        plus = mean(st.theta + dx[0], st.r + dx[1])
        minus = mean(st.theta - dx[0], st.r - dx[1])
        return (plus - minus) / (2 * h)

    grads = []
    for axis, h in enumerate(steps):
        coarse, fine = central(axis, h), central(axis, h / 2)
        extrap = (4 * fine - coarse) / 3
        floor = 1e-8 * np.linalg.norm(base) / h
        if np.linalg.norm(extrap - fine) > check_tol * np.linalg.norm(extrap) + floor:
            raise OracleStepError(f"Richardson check failed on axis {axis} (step {h:.3e})")
        grads.append(extrap)

    j = np.empty((2, 2))
    for x in range(2):
        for y in range(2):
            j[x, y] = 2.0 / scn.sigma2 * np.real(np.vdot(grads[x], grads[y]))
    logger.debug("fd oracle fim %s", j)
    return _report(j, st, FimMethod.FD_ORACLE)
