"""
Joint beamforming: active SDP at the BS, penalty-based passive SDP at the
STARS (Algorithm 2) and the outer alternation with sensor deployment
(Algorithm 3).

Covariances and coefficient matrices are Hermitian numpy arrays. The SDPs
work on R_x / P_max so every variable is O(1); J entries are rescaled to
one at a reference point before they enter an LMI.
"""

import logging
import math

import cvxpy as cp
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .channel import channel_set
from .conic import SdpProblem, require_optimal, solve_sdp, tr_inverse_epigraph
from .deploy import cost_function, run_algorithm1
from .errors import DegenerateChannelError, ExtractionRefusedError, InfeasibleError, UnobservableError
from .fim import closed_form_fim, fim_stars_matrices, fim_transmit_matrices, index_vectors
from .geometry import jacobian_T, t_hat
from .models import (
    BeamSolution,
    ChannelSet,
    DeploymentPlan,
    PenaltyState,
    PolarPosition,
    Scenario,
    Scheme,
    SolverSettings,
    SolveStatus,
    StarsProfile,
    SteeringVector,
    SystemConfig,
)

logger = logging.getLogger(__name__)

U_SHRINK = 1e-7
_E11 = np.array([[1.0, 0.0], [0.0, 0.0]])
_E22 = np.array([[0.0, 0.0], [0.0, 1.0]])


class Alg2Result(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    solution: BeamSolution
    profile: StarsProfile
    penalty: PenaltyState
    rank_one: bool
    objectives: list[float] = Field(default_factory=list)
    outer_iterations: int = 0


class TraceRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    cf: float
    speb: float
    rate: float
    penalty: float
    power: float


class FullSolution(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    plan: DeploymentPlan
    solution: BeamSolution
    profile: StarsProfile
    cfg: SystemConfig
    cf: float
    speb: float
    rate: float
    iterations: int
    rank_one: bool = True
    trace: list[TraceRow] = Field(default_factory=list)


# ===== MATRIX HELPERS =====

def _hermitian(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def psd_part(x: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_hermitian(np.asarray(x, dtype=complex)))
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T


def leading_eigpair(q: np.ndarray) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eigh(_hermitian(q))
    return float(vals[-1]), vecs[:, -1]


def penalty_value(*mats: np.ndarray) -> float:
    """Sum of nuclear minus spectral norm; zero iff every PSD matrix is rank one."""
    total = 0.0
    for q in mats:
        vals = np.clip(np.linalg.eigvalsh(_hermitian(q)), 0.0, None)
        total += float(vals.sum() - vals[-1])
    return max(total, 0.0)


def _real_trace(a, b) -> cp.Expression:
    return cp.real(cp.trace(a @ b))


# ===== COMMUNICATION =====

def user_channel(profile: StarsProfile, chans: ChannelSet) -> np.ndarray:
    """u_c with g^H Theta_t H v = u_c^H v."""
    return chans.h_br.conj().T @ (profile.q_t.conj() * chans.g_c)


def user_gamma(profile: StarsProfile, chans: ChannelSet) -> np.ndarray:
    """Gamma_c = H^H diag(g) Q_t diag(g)^H H."""
    g = chans.g_c
    return _hermitian(chans.h_br.conj().T @ (g[:, None] * profile.big_q_t * g.conj()[None, :]) @ chans.h_br)


def user_upsilon(cov: np.ndarray, chans: ChannelSet) -> np.ndarray:
    """Upsilon = diag(g)^H H cov H^H diag(g); tr(cov Gamma_c) = tr(Upsilon Q_t)."""
    g = chans.g_c
    return _hermitian(g.conj()[:, None] * (chans.h_br @ cov @ chans.h_br.conj().T) * g[None, :])


def achievable_rate(sol: BeamSolution, profile: StarsProfile, chans: ChannelSet, sigma2: float) -> float:
    gamma_c = user_gamma(profile, chans)
    signal = max(float(np.real(np.trace(sol.v_big @ gamma_c))), 0.0)
    interference = max(float(np.real(np.trace(sol.r_s0 @ gamma_c))), 0.0)
    return math.log2(1 + signal / (interference + sigma2))


def build_gamma_matrices(profile: StarsProfile, chans: ChannelSet, sv_t: SteeringVector,
                         cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Gamma_s, Gamma'_s, Gamma_c): a = tr(R_x Gamma_s), c = 2 Re tr(R_x Gamma'_s)."""
    alpha = sv_t.entries
    _, v2 = index_vectors(cfg.m_star)
    h, q = chans.h_br, profile.big_q_r
    gamma_s = h.conj().T @ (alpha[:, None] * q * alpha.conj()[None, :]) @ h
    gamma_x = h.conj().T @ ((v2 * alpha)[:, None] * q * alpha.conj()[None, :]) @ h
    return _hermitian(gamma_s), gamma_x, user_gamma(profile, chans)


# ===== ACTIVE BEAMFORMING =====

def _speb_weights(st: PolarPosition) -> np.ndarray:
    th = t_hat(jacobian_T(st))
    return np.array([th[0, 0], th[1, 1]])


def active_bf_sdp(profile: StarsProfile, chans: ChannelSet, st: PolarPosition, scn: Scenario,
                  cfg: SystemConfig, sensing_beam: bool = True,
                  settings: SolverSettings | None = None) -> BeamSolution:
    """
    Minimize the closed-form SPEB over (R_s0, V_c) under the rate and
    power constraints, through diag(J_ii / T_ii) >= U and the tr(U^-1)
    epigraph.
    """
    settings = settings or SolverSettings()
    n = chans.h_br.shape[1]
    power = scn.p_max
    need = scn.rate_factor

    gc_hat = power * user_gamma(profile, chans) / scn.sigma2
    max_snr = float(np.linalg.eigvalsh(gc_hat)[-1])
    if need > max_snr * (1 + 1e-9):
        best = math.log2(1 + max(max_snr, 0.0))
        raise InfeasibleError(f"rate target {scn.r_min:.3g} bit/s/Hz exceeds capacity {best:.3g}",
                              best_value=best)

    weights = _speb_weights(st)
    m11, m22 = fim_transmit_matrices(profile.big_q_r, st, scn, cfg)
    d_mats = [power * m11 / weights[0], power * m22 / weights[1]]
    ref = np.array([np.real(np.trace(d)) / n for d in d_mats])
    if ref.min() <= 0:
        raise UnobservableError("no Fisher information reaches the sensors at uniform power", math.inf)
    scale = 1.0 / ref

    v = cp.Variable((n, n), hermitian=True, name="V")
    s = cp.Variable((n, n), hermitian=True, name="S") if sensing_beam else None
    x = v + s if s is not None else v
    u = cp.Variable((2, 2), symmetric=True, name="U")
    d1 = scale[0] * _real_trace(x, d_mats[0])
    d2 = scale[1] * _real_trace(x, d_mats[1])
    coupling = d1 * _E11 + d2 * _E22 - u
    _, epigraph, term = tr_inverse_epigraph(u, weights=scale / scale.sum())

    interference = _real_trace(s, gc_hat) if s is not None else 0.0
    constraints = [
        v >> 0,
        cp.real(cp.trace(x)) <= 1,
        _real_trace(v, gc_hat) >= need * (interference + 1),
        0.5 * (coupling + coupling.T) >> 0,
        *epigraph,
    ]
    if s is not None:
        constraints.append(s >> 0)

    problem = SdpProblem(name="active_bf", objective=cp.Minimize(term), constraints=constraints)
    report = solve_sdp(problem, settings.sdp_tol, settings.solver)
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError("active beamforming is infeasible", report,
                              best_value=math.log2(1 + max_snr))
    require_optimal(report, "active beamforming")

    v_big = power * psd_part(report.values["V"])
    r_s0 = power * psd_part(report.values["S"]) if s is not None else np.zeros((n, n), dtype=complex)
    total = float(np.real(np.trace(v_big + r_s0)))
    if total > power:
        v_big, r_s0 = v_big * (power / total), r_s0 * (power / total)

    root = np.diag(1.0 / np.sqrt(scale))
    u_mat = root @ np.asarray(report.values["U"]) @ root
    rx = (r_s0 + v_big) / power
    diag = np.array([np.real(np.trace(rx @ d)) for d in d_mats])
    objective = float(np.sum(1.0 / diag)) if diag.min() > 0 else math.inf
    logger.debug("active bf: speb=%.6g power=%.6g", objective, total)
    return BeamSolution(r_s0=r_s0, v_big=v_big, v_c=np.zeros(n, dtype=complex),
                        u_mat=u_mat, objective=objective)


def rank_one_recovery(sol: BeamSolution, chans: ChannelSet, profile: StarsProfile,
                      absorb_residual: bool = False, tol: float = 1e-14) -> BeamSolution:
    """
    v_c = V u_c / sqrt(u_c^H V u_c). The rate is preserved for a rank-one
    profile; with `absorb_residual` the leftover V - v_c v_c^H moves into
    R_s0 so R_x is unchanged.
    """
    u = user_channel(profile, chans)
    v_bar = sol.v_big
    gain = float(np.real(u.conj() @ v_bar @ u))
    if gain <= tol * max(float(np.real(np.trace(v_bar))) * float(np.real(u.conj() @ u)), 1e-300):
        raise DegenerateChannelError("user channel carries no energy through V_c")
    v_c = v_bar @ u / math.sqrt(gain)
    v_rank_one = np.outer(v_c, v_c.conj())
    r_s0 = sol.r_s0 + psd_part(v_bar - v_rank_one) if absorb_residual else sol.r_s0
    return BeamSolution(r_s0=r_s0, v_big=v_rank_one, v_c=v_c, u_mat=sol.u_mat, objective=sol.objective)


# ===== PASSIVE BEAMFORMING =====

def transmit_half(count: int) -> np.ndarray:
    """Boolean mask of the conventional-RIS transmit half (centre element included)."""
    mask = np.zeros(count + 1, dtype=bool)
    mask[: (count + 2) // 2] = True
    return mask


def conventional_profile(count: int) -> StarsProfile:
    t = transmit_half(count)
    return StarsProfile.from_vectors(np.where(t, 0.0, 1.0).astype(complex), t.astype(complex))


def aligned_profile(chans: ChannelSet, count: int, conventional: bool = False) -> StarsProfile:
    """
    Starting profile whose transmit phases co-phase the CU channel with the
    dominant left singular vector of the BS-STARS channel.
    """
    left = np.linalg.svd(chans.h_br)[0][:, 0]
    phase = np.exp(1j * (np.angle(chans.g_c) - np.angle(left)))
    if conventional:
        t = transmit_half(count)
        return StarsProfile.from_vectors(np.where(t, 0.0, 1.0).astype(complex), t * phase)
    amp = math.sqrt(2) / 2
    return StarsProfile.from_vectors(np.full(count + 1, amp, dtype=complex), amp * phase)


def max_rate(profile: StarsProfile, chans: ChannelSet, scn: Scenario) -> float:
    """Rate of the best single beam at full power with no sensing interference."""
    snr = scn.p_max * float(np.linalg.eigvalsh(user_gamma(profile, chans))[-1]) / scn.sigma2
    return math.log2(1 + max(snr, 0.0))


def _profile_from_matrices(big_q_r: np.ndarray, big_q_t: np.ndarray) -> StarsProfile:
    q_vecs = []
    for q in (big_q_r, big_q_t):
        lam, vec = leading_eigpair(q)
        q_vecs.append(np.conj(math.sqrt(max(lam, 0.0)) * vec))
    return StarsProfile(q_r=q_vecs[0], q_t=q_vecs[1], big_q_r=big_q_r, big_q_t=big_q_t,
                        rank_one=penalty_value(big_q_r, big_q_t) == 0.0)


def _coefficient_variable(count: int, support: np.ndarray | None, name: str):
    """Hermitian variable embedded on `support`; returns (full expression, free block)."""
    if support is None:
        q = cp.Variable((count + 1, count + 1), hermitian=True, name=name)
        return q, q
    select = np.eye(count + 1)[support]
    block = cp.Variable((int(support.sum()), int(support.sum())), hermitian=True, name=name)
    return select.T @ block @ select, block


def passive_bf_penalty_step(profile_prev: StarsProfile, sol: BeamSolution, chans: ChannelSet,
                            st: PolarPosition, scn: Scenario, cfg: SystemConfig, rho: float,
                            conventional: bool = False,
                            settings: SolverSettings | None = None) -> StarsProfile:
    """
    One penalty SDP over (Q_r, Q_t) with U and the beamformer fixed. The
    rank penalty tr(Q) - ||Q||_2 is linearized at the previous iterate.
    """
    settings = settings or SolverSettings()
    count = cfg.m_star
    weights = _speb_weights(st)
    y11, y22 = fim_stars_matrices(sol.rx, st, scn, cfg)
    d_mats = [y11 / weights[0], y22 / weights[1]]
    ref = np.array([float(np.real(np.trace(d @ profile_prev.big_q_r))) for d in d_mats])
    if ref.min() <= 0:
        raise UnobservableError("previous profile gives no Fisher information", math.inf)
    scale = 1.0 / ref
    root = np.diag(np.sqrt(scale))
    u_fixed = (1 - U_SHRINK) * (root @ np.real(sol.u_mat) @ root)

    t_support = transmit_half(count) if conventional else None
    r_support = ~t_support if conventional else None
    q_r, q_r_block = _coefficient_variable(count, r_support, "Q_r")
    q_t, q_t_block = _coefficient_variable(count, t_support, "Q_t")

    ups_c = user_upsilon(sol.v_big, chans) / scn.sigma2
    ups_s = user_upsilon(sol.r_s0, chans) / scn.sigma2
    d1 = scale[0] * _real_trace(d_mats[0], q_r)
    d2 = scale[1] * _real_trace(d_mats[1], q_r)
    coupling = d1 * _E11 + d2 * _E22 - u_fixed

    constraints = [
        q_r_block >> 0,
        q_t_block >> 0,
        _real_trace(ups_c, q_t) >= scn.rate_factor * (_real_trace(ups_s, q_t) + 1),
        0.5 * (coupling + coupling.T) >> 0,
    ]
    if conventional:
        constraints += [cp.real(cp.diag(q_r_block)) == 1, cp.real(cp.diag(q_t_block)) == 1]
    else:
        constraints.append(cp.real(cp.diag(q_r)) + cp.real(cp.diag(q_t)) == 1)

    penalty = 0.0
    for var, prev in ((q_r, profile_prev.big_q_r), (q_t, profile_prev.big_q_t)):
        lam, vec = leading_eigpair(prev)
        linear = cp.real(vec.conj() @ var @ vec) - float(np.real(vec.conj() @ prev @ vec))
        penalty = penalty + cp.real(cp.trace(var)) - lam - linear
    problem = SdpProblem(name="passive_bf", objective=cp.Minimize(penalty / rho), constraints=constraints)
    report = solve_sdp(problem, settings.sdp_tol, settings.solver)
    if report.status is not SolveStatus.OPTIMAL:
        logger.warning("passive step ended %s; keeping the previous profile", report.status.value)
        return profile_prev

    big_q_r = psd_part(_embed(report.values["Q_r"], r_support, count))
    big_q_t = psd_part(_embed(report.values["Q_t"], t_support, count))
    return _profile_from_matrices(big_q_r, big_q_t)


def _embed(block: np.ndarray, support: np.ndarray | None, count: int) -> np.ndarray:
    if support is None:
        return np.asarray(block)
    full = np.zeros((count + 1, count + 1), dtype=complex)
    full[np.ix_(support, support)] = block
    return full


def extract_diag_profile(q_mats: tuple[np.ndarray, np.ndarray], penalty_tol: float = 1e-5,
                         force: bool = False) -> StarsProfile:
    """
    q_l from the leading eigenpair of Q_l, global phase fixed on the first
    non-negligible entry, then elementwise rescaled onto the energy split.
    """
    big_q_r, big_q_t = q_mats
    penalty = penalty_value(big_q_r, big_q_t)
    if penalty > penalty_tol and not force:
        raise ExtractionRefusedError(penalty, penalty_tol)

    vectors = []
    for q in (big_q_r, big_q_t):
        lam, vec = leading_eigpair(q)
        tilde = math.sqrt(max(lam, 0.0)) * vec
        big = np.flatnonzero(np.abs(tilde) > 1e-9 * max(np.abs(tilde).max(), 1e-300))
        if big.size:
            tilde = tilde * np.exp(-1j * np.angle(tilde[big[0]]))
        vectors.append(np.conj(tilde))
    q_r, q_t = vectors

    energy = np.abs(q_r) ** 2 + np.abs(q_t) ** 2
    shrink = np.where(energy > 1.0, 1.0 / np.sqrt(np.maximum(energy, 1e-300)), 1.0)
    return StarsProfile.from_vectors(q_r * shrink, q_t * shrink)


# ===== ALGORITHM 2 =====

def run_algorithm2(init: tuple[BeamSolution | None, StarsProfile], chans: ChannelSet, st: PolarPosition,
                   scn: Scenario, cfg: SystemConfig, settings: SolverSettings | None = None,
                   sensing_beam: bool = True, conventional: bool = False) -> Alg2Result:
    """
    Penalty alternation between the active SDP and the passive SDP, then
    rank-one extraction of the STARS coefficients and a last active solve.

    When a dedicated sensing beam is allowed, the final rank-one recovery
    moves the residual V - v_c v_c^H into R_s0. R_x and the rate are
    unchanged; R_s0 is not. Without a sensing beam R_s0 stays zero.
    """
    settings = settings or SolverSettings()
    _, profile = init
    sol = active_bf_sdp(profile, chans, st, scn, cfg, sensing_beam, settings)
    start, first = profile, sol
    objectives = [sol.objective]

    penalty = penalty_value(profile.big_q_r, profile.big_q_t)
    state = PenaltyState(rho=settings.rho0_factor * max(penalty, 1.0),
                         c_shrink=settings.c_shrink, penalty_value=penalty)
    outer = 0
    for outer in range(1, settings.bf_outer_max + 1):
        for _ in range(settings.bf_inner_max):
            candidate = passive_bf_penalty_step(profile, sol, chans, st, scn, cfg, state.rho,
                                                conventional, settings)
            try:
                new_sol = active_bf_sdp(candidate, chans, st, scn, cfg, sensing_beam, settings)
            except (InfeasibleError, UnobservableError) as exc:
                logger.warning("active step rejected the new profile: %s", exc)
                break
            if new_sol.objective > sol.objective * (1 + 1e-6):
                break
            change = abs(sol.objective - new_sol.objective) / sol.objective
            profile, sol = candidate, new_sol
            objectives.append(sol.objective)
            if change < settings.eps:
                break
        penalty = penalty_value(profile.big_q_r, profile.big_q_t)
        state = PenaltyState(rho=state.rho, c_shrink=state.c_shrink, penalty_value=penalty)
        logger.debug("alg2 outer=%d rho=%.3g penalty=%.3g speb=%.6g", outer, state.rho, penalty, sol.objective)
        if penalty <= settings.penalty_tol:
            break
        state = PenaltyState(rho=state.rho * state.c_shrink, c_shrink=state.c_shrink, penalty_value=penalty)

    rank_one = penalty <= settings.penalty_tol
    if not rank_one:
        logger.warning("NOT_RANK_ONE: penalty %.3e above %.1e after %d outer steps",
                       penalty, settings.penalty_tol, outer)
    extracted = extract_diag_profile((profile.big_q_r, profile.big_q_t), settings.penalty_tol, force=True)
    try:
        final = active_bf_sdp(extracted, chans, st, scn, cfg, sensing_beam, settings)
    except (InfeasibleError, UnobservableError) as exc:
        logger.warning("extracted profile rejected (%s); keeping the starting profile", exc)
        extracted, final = start, first
    final = rank_one_recovery(final, chans, extracted, absorb_residual=sensing_beam)
    return Alg2Result(solution=final, profile=extracted, penalty=state, rank_one=rank_one,
                      objectives=objectives, outer_iterations=outer)


# ===== ALGORITHM 3 =====

def evaluate_solution(sol: BeamSolution, profile: StarsProfile, chans: ChannelSet, st: PolarPosition,
                      scn: Scenario, cfg: SystemConfig) -> tuple[float, float, float]:
    """(cf, speb, rate) with the shared closed-form evaluator."""
    speb = closed_form_fim(sol.rx, profile, st, scn, cfg).speb
    rate = achievable_rate(sol, profile, chans, scn.sigma2)
    return cost_function(speb, cfg.m_sensor, scn), speb, rate


def initial_plan(cfg: SystemConfig) -> DeploymentPlan:
    d_s = max(cfg.lambda_c / 2, cfg.min_interval)
    return DeploymentPlan(d_s=d_s, m_r=min(cfg.m_star, 2 * math.floor(cfg.aperture / d_s / 2 + 1e-9)))


def run_algorithm3(scn: Scenario, cfg: SystemConfig, init: DeploymentPlan | None = None,
                   settings: SolverSettings | None = None, scheme: Scheme = Scheme.PROPOSED,
                   optimize_deployment: bool = True) -> FullSolution:
    """
    Alternate deployment (Algorithm 1) and beamforming (Algorithm 2). An
    iterate that raises the cost is rejected and ends the loop.
    """
    settings = settings or SolverSettings()
    sensing_beam = scheme is not Scheme.CONISAC
    conventional = scheme is Scheme.CONRIS
    chans = channel_set(cfg, scn.cu)
    st = scn.st

    n = cfg.n_bs + 1
    rx = (scn.p_max / n) * np.eye(n, dtype=complex)
    profile = aligned_profile(chans, cfg.m_star, conventional)
    plan = init or initial_plan(cfg)

    best: FullSolution | None = None
    trace: list[TraceRow] = []
    for it in range(1, settings.ao_max_iter + 1):
        if optimize_deployment:
            plan = run_algorithm1(rx, profile, st, scn, cfg.with_deployment(plan.m_r, plan.d_s), plan, settings)
        cfg_t = cfg.with_deployment(plan.m_r, plan.d_s)
        result = run_algorithm2((None, profile), chans, st, scn, cfg_t, settings, sensing_beam, conventional)
        cf, speb, rate = evaluate_solution(result.solution, result.profile, chans, st, scn, cfg_t)

        if best is not None and cf > best.cf:
            logger.warning("AO iterate %d raised cf %.6g -> %.6g; keeping the previous one", it, best.cf, cf)
            break
        trace.append(TraceRow(iteration=it, cf=cf, speb=speb, rate=rate,
                              penalty=result.penalty.penalty_value, power=result.solution.power))
        logger.debug("alg3 it=%d cf=%.8g speb=%.6g rate=%.4g M_r=%d d_s=%.5g",
                     it, cf, speb, rate, plan.m_r, plan.d_s)
        previous = best.cf if best is not None else math.inf
        best = FullSolution(plan=plan.model_copy(update={"cf_value": cf, "speb_value": speb}),
                            solution=result.solution, profile=result.profile, cfg=cfg_t, cf=cf,
                            speb=speb, rate=rate, iterations=it, rank_one=result.rank_one,
                            trace=list(trace))
        rx, profile = result.solution.rx, result.profile
        if not optimize_deployment or (previous - cf) <= settings.eps * cf:
            break
    if best is None:
        raise InfeasibleError("no feasible AO iterate")
    return best

