"""
Sensor deployment (Algorithm 1): the interval step and the count step.

The interval is optimized on d~ = d_s^2, first through the closed-form
aperture solution and otherwise by SCA. The sensor count is relaxed to a
continuous variable, solved as a condensed geometric program, and rounded
on the even lattice the symmetric index set requires.
"""

import logging
import math

import cvxpy as cp
import numpy as np
from pydantic import BaseModel, ConfigDict

from .conic import GpProblem, SdpProblem, require_optimal, solve_gp, solve_sdp
from .errors import ConfigError, SolverError, UnobservableError
from .fim import FimConstants, correlation_factors, fim_constants, fim_weights
from .geometry import jacobian_T, t_hat
from .models import (
    CorrelationFactors,
    DeployCoeffs,
    DeploymentPlan,
    PolarPosition,
    Scenario,
    SolverSettings,
    StarsProfile,
    SystemConfig,
)

logger = logging.getLogger(__name__)

APERTURE_RTOL = 1e-9


def cost_function(speb: float, m_r: int, scn: Scenario) -> float:
    """Weighted cost: omega0 SPEB / eps0 + (1 - omega0) M_r / M0."""
    return scn.omega0 * speb / scn.eps0 + (1 - scn.omega0) * m_r / scn.m0


def even_floor(x: float) -> int:
    return 2 * math.floor(x / 2 + APERTURE_RTOL)


class CountChoice(BaseModel):
    model_config = ConfigDict(frozen=True)

    m_r: int
    d_s: float
    m_continuous: float
    gp_fallback: bool = False


# ===== CONTEXT =====

class DeployContext(BaseModel):
    """Everything Algorithm 1 holds fixed: beamformer factors, geometry, cost weights."""

    model_config = ConfigDict(frozen=True)

    factors: CorrelationFactors
    consts: FimConstants
    t11: float
    t22: float
    scn: Scenario
    cfg: SystemConfig

    @property
    def aperture(self) -> float:
        return self.cfg.aperture

    def max_count(self, d_s: float | None = None) -> int:
        return even_floor(self.aperture / (d_s or self.cfg.min_interval))

    def interval_bounds(self, m_r: int) -> tuple[float, float]:
        """Bounds on d~ for a fixed count: [d_min^2, (M d_R / M_r)^2]."""
        lo = self.cfg.min_interval ** 2
        hi = (self.aperture / m_r) ** 2
        if lo > hi * (1 + APERTURE_RTOL):
            raise ConfigError(
                f"no feasible interval for M_r={m_r}: d_min={self.cfg.min_interval:.4g} m "
                f"exceeds aperture limit {math.sqrt(hi):.4g} m"
            )
        return lo, max(lo, hi)

    def diagonal(self, m_r: int, d_s: float) -> tuple[float, float]:
        return fim_weights(self.consts, m_r, d_s).diagonal(self.factors)

    def speb(self, m_r: int, d_s: float) -> float:
        j11, j22 = self.diagonal(m_r, d_s)
        if j11 <= 0 or j22 <= 0:
            return math.inf
        return self.t11 / j11 + self.t22 / j22

    def cf(self, m_r: int, d_s: float) -> float:
        return cost_function(self.speb(m_r, d_s), m_r, self.scn)

    def coeffs(self, m_r: int, d_s: float) -> DeployCoeffs:
        unit = fim_weights(self.consts, m_r, 1.0)
        f, c = self.factors, self.consts
        d_tilde = d_s * d_s
        return DeployCoeffs(
            c11=max(unit.w11_a * f.a, 0.0),
            c10=max(unit.w11_b1 * f.b1, 0.0),
            c2=max(unit.w22_a * f.a, 0.0),
            c1=unit.w22_c * f.c,
            c0=unit.w22_b2 * f.b2,
            b0=2 * c.d_r ** 4 * f.b2 / c.r ** 4,
            b1=c.kappa * d_tilde * c.d_r ** 2 * f.c / (6 * c.r_eff ** 2 * c.r ** 2),
            b2=c.kappa ** 2 * d_tilde ** 2 * f.a / (120 * c.r_eff ** 4),
            m_r=m_r,
            d_s=d_s,
            t11=self.t11,
            t22=self.t22,
        )

    # posynomial pieces of J11 = g1 f1(M_r) and J22 = g2 (f2+ - f2-)
    @property
    def g1(self) -> float:
        return self.consts.k * self.consts.k_theta / 12

    @property
    def g2(self) -> float:
        return self.consts.k * self.consts.k_r / 2

    def f1_terms(self) -> list[tuple[float, int, int]]:
        """(coefficient, power of M_r, power of d~)."""
        a, b1, d_r = self.factors.a, self.factors.b1, self.consts.d_r
        return [(a, 3, 1), (3 * a, 2, 1), (2 * a, 1, 1),
                (12 * d_r ** 2 * b1, 1, 0), (12 * d_r ** 2 * b1, 0, 0)]

    def f2_terms(self) -> list[tuple[float, int, int]]:
        c, f = self.consts, self.factors
        beta2 = c.kappa ** 2 * f.a / (120 * c.r_eff ** 4)
        beta1 = c.kappa * c.d_r ** 2 * f.c / (6 * c.r_eff ** 2 * c.r ** 2)
        beta0 = 2 * c.d_r ** 4 * f.b2 / c.r ** 4
        return [(3 * beta2, 5, 2), (15 * beta2, 4, 2), (20 * beta2, 3, 2), (-8 * beta2, 1, 2),
                (-beta1, 3, 1), (-3 * beta1, 2, 1), (-2 * beta1, 1, 1),
                (beta0, 1, 0), (beta0, 0, 0)]


def deploy_context(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
                   cfg: SystemConfig) -> DeployContext:
    th = t_hat(jacobian_T(st))
    return DeployContext(
        factors=correlation_factors(rx, stars_r, st, cfg),
        consts=fim_constants(st, scn, cfg),
        t11=float(th[0, 0]),
        t22=float(th[1, 1]),
        scn=scn,
        cfg=cfg,
    )


def deploy_coefficients(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
                        cfg: SystemConfig) -> DeployCoeffs:
    return deploy_context(rx, stars_r, st, scn, cfg).coeffs(cfg.m_sensor, cfg.d_s)


# ===== INTERVAL STEP =====

def prop2_closed_form(coeffs: DeployCoeffs, m_r: int, cfg: SystemConfig) -> float | None:
    """
    d_s = M d_R / M_r when the J22 parabola stays positive and its vertex is
    nearer the lower end of the interval; J11 grows with d~, so both entries
    peak at the aperture limit.
    """
    lo, hi = cfg.min_interval ** 2, (cfg.aperture / m_r) ** 2
    if lo > hi * (1 + APERTURE_RTOL):
        raise ConfigError(f"no feasible interval for M_r={m_r}")
    if coeffs.c2 <= 0:
        return None
    positive = coeffs.c1 ** 2 <= 4 * coeffs.c2 * coeffs.c0
    vertex = coeffs.c1 / (2 * coeffs.c2)
    if positive and abs(vertex - lo) < abs(vertex - hi):
        return cfg.aperture / m_r
    return None


def sca_interval(coeffs: DeployCoeffs, m_r: int, d_init: float, cfg: SystemConfig,
                 settings: SolverSettings | None = None) -> float:
    """
    SCA on d~: d~^2 inside J22 is replaced by its tangent at the current
    point, which lower-bounds J22 and so upper-bounds the SPEB.
    """
    settings = settings or SolverSettings()
    lo, hi = cfg.min_interval ** 2, (cfg.aperture / m_r) ** 2
    if lo > hi * (1 + APERTURE_RTOL):
        raise ConfigError(f"no feasible interval for M_r={m_r}")
    hi = max(lo, hi)
    if coeffs.c11 == 0 and coeffs.c2 == 0 and coeffs.c1 == 0:
        return d_init

    x_lo = lo / hi
    xn = min(max(d_init * d_init / hi, x_lo), 1.0)
    value = coeffs.speb(xn * hi)
    if not math.isfinite(value):
        raise UnobservableError(f"SPEB is unbounded at the initial interval {d_init:.4g} m")

    for it in range(settings.sca_max_iter):
        j11n, j22n = coeffs.diagonal(xn * hi)
        x = cp.Variable(name="x")
        tangent = xn ** 2 + 2 * xn * (x - xn)
        j1 = (coeffs.c11 * hi * x + coeffs.c10) / j11n
        j2 = (coeffs.c2 * hi ** 2 * tangent - coeffs.c1 * hi * x + coeffs.c0) / j22n
        objective = cp.Minimize(coeffs.t11 / (j11n * value) * cp.inv_pos(j1)
                                + coeffs.t22 / (j22n * value) * cp.inv_pos(j2))
        problem = SdpProblem(name="sca_interval", objective=objective,
                             constraints=[x >= x_lo, x <= 1])
        report = require_optimal(solve_sdp(problem, settings.sdp_tol, settings.solver), "SCA interval step")

        x_new = min(max(float(report.values["x"]), x_lo), 1.0)
        new_value = coeffs.speb(x_new * hi)
        logger.debug("sca it=%d d~=%.6g speb=%.6g", it, x_new * hi, new_value)
        if new_value > value:
            break
        change = (value - new_value) / value
        xn, value = x_new, new_value
        if change < settings.eps:
            break
    return math.sqrt(xn * hi)


def interval_step(ctx: DeployContext, m_r: int, d_init: float,
                  settings: SolverSettings | None = None) -> float:
    coeffs = ctx.coeffs(m_r, d_init)
    d_s = prop2_closed_form(coeffs, m_r, ctx.cfg)
    if d_s is not None:
        return d_s
    return sca_interval(coeffs, m_r, min(d_init, ctx.aperture / m_r), ctx.cfg, settings)


# ===== COUNT STEP =====

def _monomials(terms: list[tuple[float, int, int]], d_tilde: float | None,
               aperture: float) -> list[tuple[float, float]]:
    """
    Fix the d~ dependence: a given d~, or d~ = (M d_R)^2 M_r^-2 on the aperture limit.
    """
    out = []
    for coef, e_m, e_d in terms:
        if d_tilde is not None:
            out.append((coef * d_tilde ** e_d, float(e_m)))
        else:
            out.append((coef * aperture ** (2 * e_d), float(e_m - 2 * e_d)))
    return out


def posynomial_value(monos: list[tuple[float, float]], m: float) -> float:
    return float(sum(c * m ** e for c, e in monos))


def split_by_sign(monos: list[tuple[float, float]]) -> tuple[list, list]:
    plus = [(c, e) for c, e in monos if c > 0]
    minus = [(-c, e) for c, e in monos if c < 0]
    return plus, minus


def condense(monos: list[tuple[float, float]], m_n: float) -> tuple[float, float]:
    """
    AGM monomial lower bound of a posynomial, tight at m_n.

    Returns (value at m_n, exponent): f_hat(m) = f(m_n) (m / m_n)^exponent.
    """
    u = np.array([c * m_n ** e for c, e in monos])
    total = float(u.sum())
    if not monos or total <= 0:
        raise SolverError("posynomial vanishes at the expansion point")
    weights = u / total
    return total, float(weights @ np.array([e for _, e in monos]))


def round_to_lattice(m_cont: float, objective, m_max: int) -> int:
    """Best of the two even counts bracketing m_cont, under the true objective."""
    lo = min(max(2, 2 * math.floor(m_cont / 2)), m_max)
    hi = min(lo + 2, m_max)
    return min((lo, hi), key=lambda m: (objective(m), m))


def exhaustive_count(objective, m_max: int) -> int:
    return min(range(2, m_max + 1, 2), key=lambda m: (objective(m), m))


def _gp_continuous_count(ctx: DeployContext, d_tilde: float | None, m_lo: float, m_hi: float,
                         m_init: float, settings: SolverSettings) -> float:
    scn = ctx.scn
    f1 = _monomials(ctx.f1_terms(), d_tilde, ctx.aperture)
    f2_plus, f2_minus = split_by_sign(_monomials(ctx.f2_terms(), d_tilde, ctx.aperture))
    m_n = min(max(m_init, m_lo), m_hi)

    for it in range(settings.gp_max_iter):
        big_f1, e1 = condense(f1, m_n)
        big_fp, ep = condense(f2_plus, m_n)
        big_fm = posynomial_value(f2_minus, m_n)
        slack = big_fp - big_fm
        if big_f1 <= 0 or slack <= 0:
            raise SolverError(f"J entries not positive at M_r={m_n:.3f}")

        # z = m / m_n, y = x2 / slack: both near 1 at the expansion point
        z = cp.Variable(pos=True, name="z")
        y = cp.Variable(pos=True, name="y")
        w_angle = scn.omega0 / scn.eps0 * ctx.t11 / (ctx.g1 * big_f1)
        w_range = scn.omega0 / scn.eps0 * ctx.t22 / (ctx.g2 * slack)
        w_count = (1 - scn.omega0) * m_n / scn.m0
        scale = w_angle + w_range + w_count
        objective = cp.Minimize((w_angle * z ** (-e1) + w_range / y + w_count * z) / scale)

        lhs = (slack / big_fp) * y * z ** (-ep)
        for c, e in f2_minus:
            lhs = lhs + (c * m_n ** e / big_fp) * z ** (e - ep)
        constraints = [lhs <= 1, z >= m_lo / m_n, z <= m_hi / m_n]
        problem = GpProblem(name="gp_sensor_count", objective=objective, constraints=constraints)
        report = require_optimal(solve_gp(problem, settings.gp_tol, settings.solver), "sensor-count GP")

        m_new = min(max(float(report.values["z"]) * m_n, m_lo), m_hi)
        logger.debug("gp it=%d M_r~=%.6g", it, m_new)
        done = abs(m_new - m_n) <= settings.eps * m_n
        m_n = m_new
        if done:
            break
    return m_n


def gp_sensor_count(ctx: DeployContext, d_s: float, settings: SolverSettings | None = None,
                    coupled: bool = False, m_init: float | None = None) -> CountChoice:
    """
    Count step. With `coupled`, the interval rides the aperture limit
    d_s = M d_R / M_r while the count moves, and each rounded candidate is
    scored with its interval re-solved.
    """
    settings = settings or SolverSettings()
    if coupled:
        m_max = ctx.max_count()
        m_hi = ctx.aperture / ctx.cfg.min_interval

        def interval_for(m: int) -> float:
            return interval_step(ctx, m, min(d_s, ctx.aperture / m), settings)
    else:
        m_max = ctx.max_count(d_s)
        m_hi = ctx.aperture / d_s

        def interval_for(m: int) -> float:
            return d_s
    if m_max < 2:
        raise ConfigError(f"interval {d_s:.4g} m leaves no room for two sensors")

    def objective(m: int) -> float:
        return ctx.cf(m, interval_for(m))

    if m_max == 2:
        return CountChoice(m_r=2, d_s=interval_for(2), m_continuous=2.0)

    start = m_init if m_init is not None else 0.5 * (2 + m_hi)
    try:
        m_cont = _gp_continuous_count(ctx, None if coupled else d_s * d_s, 2.0, m_hi, start, settings)
    except SolverError as exc:
        logger.warning("count GP failed (%s); scanning even counts up to %d", exc, m_max)
        m_r = exhaustive_count(objective, m_max)
        return CountChoice(m_r=m_r, d_s=interval_for(m_r), m_continuous=float(m_r), gp_fallback=True)

    m_r = round_to_lattice(m_cont, objective, m_max)
    return CountChoice(m_r=m_r, d_s=interval_for(m_r), m_continuous=m_cont)


# ===== ALGORITHM 1 =====

def run_algorithm1(rx: np.ndarray, stars_r: StarsProfile, st: PolarPosition, scn: Scenario,
                   cfg: SystemConfig, init: DeploymentPlan,
                   settings: SolverSettings | None = None) -> DeploymentPlan:
    settings = settings or SolverSettings()
    ctx = deploy_context(rx, stars_r, st, scn, cfg)
    return optimize_deployment(ctx, init, settings)


def optimize_deployment(ctx: DeployContext, init: DeploymentPlan,
                        settings: SolverSettings | None = None) -> DeploymentPlan:
    settings = settings or SolverSettings()
    m_r = min(init.m_r, ctx.max_count())
    d_s = min(max(init.d_s, ctx.cfg.min_interval), ctx.aperture / m_r)
    cf = ctx.cf(m_r, d_s)
    fallback = False
    iterations = 0

    for iterations in range(1, settings.alg1_max_iter + 1):
        d_mid = interval_step(ctx, m_r, d_s, settings)
        cf_mid = ctx.cf(m_r, d_mid)
        at_limit = m_r * d_mid >= ctx.aperture * (1 - 1e-7)
        choice = gp_sensor_count(ctx, d_mid, settings, coupled=at_limit, m_init=m_r)
        fallback = fallback or choice.gp_fallback
        cf_new = ctx.cf(choice.m_r, choice.d_s)

        cand_m, cand_d, cand_cf = ((choice.m_r, choice.d_s, cf_new) if cf_new <= cf_mid
                                   else (m_r, d_mid, cf_mid))
        logger.debug("alg1 it=%d M_r=%d d_s=%.6g cf=%.8g", iterations, cand_m, cand_d, cand_cf)
        if cand_cf >= cf:
            break
        improvement = (cf - cand_cf) / cf
        m_r, d_s, cf = cand_m, cand_d, cand_cf
        if improvement < settings.eps:
            break

    return DeploymentPlan(d_s=d_s, m_r=m_r, cf_value=cf, speb_value=ctx.speb(m_r, d_s),
                          iterations=iterations, gp_fallback=fallback)


def exhaustive_deployment(ctx: DeployContext, points: int = 200) -> DeploymentPlan:
    """Brute-force reference over even counts and a d_s grid per count."""
    best = None
    for m_r in range(2, ctx.max_count() + 1, 2):
        lo, hi = ctx.interval_bounds(m_r)
        for d_tilde in np.linspace(lo, hi, points):
            d_s = math.sqrt(d_tilde)
            cf = ctx.cf(m_r, d_s)
            if best is None or cf < best[0]:
                best = (cf, m_r, d_s)
    cf, m_r, d_s = best
    return DeploymentPlan(d_s=d_s, m_r=m_r, cf_value=cf, speb_value=ctx.speb(m_r, d_s))
