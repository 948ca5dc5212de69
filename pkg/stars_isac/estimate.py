"""
Echo synthesis and the grid-based ML and MUSIC position estimators.
"""

import logging
import math

import numpy as np

from .channel import bs_stars_channel, nf_steering, star_steering
from .fim import mean_echo
from .geometry import effective_range
from .models import (
    BeamSolution,
    CartesianPosition,
    EchoBlock,
    EstimatorGrid,
    PolarPosition,
    Scenario,
    StarsProfile,
    SystemConfig,
)

logger = logging.getLogger(__name__)


def _sqrt_psd(x: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (x + x.conj().T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-power circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def transmit_block(sol: BeamSolution, l_slots: int, rng: np.random.Generator) -> np.ndarray:
    """X = R_s0^(1/2) S + v_c c^T with independent unit-power symbols."""
    n = sol.r_s0.shape[0]
    x_bar = _sqrt_psd(sol.r_s0) @ _cn(rng, (n, l_slots))
    if np.any(sol.v_c):
        x_bar = x_bar + np.outer(sol.v_c, _cn(rng, l_slots))
    else:
        x_bar = x_bar + _sqrt_psd(sol.v_big) @ _cn(rng, (n, l_slots))
    return x_bar


def synthesize_echo(sol: BeamSolution, profile: StarsProfile, st: PolarPosition, scn: Scenario,
                    cfg: SystemConfig, seed: int, noise: bool = True, exact: bool = False) -> EchoBlock:
    rng = np.random.default_rng(seed)
    x_bar = transmit_block(sol, scn.l_slots, rng)
    y_s = mean_echo(st, x_bar, profile, scn, cfg, exact=exact)
    if noise:
        y_s = y_s + math.sqrt(scn.sigma2) * _cn(rng, y_s.shape)
    return EchoBlock(y_s=y_s, x_bar=x_bar, seed=seed, truth=st)


# ===== GRID =====

def search_grid(grid: EstimatorGrid, center: PolarPosition) -> tuple[np.ndarray, np.ndarray]:
    half_theta = math.radians(grid.span_theta_deg) / 2
    ranges = np.linspace(center.r - grid.span_r / 2, center.r + grid.span_r / 2, grid.points_r)
    thetas = np.linspace(center.theta - half_theta, center.theta + half_theta, grid.points_theta)
    return ranges[ranges > 0], thetas


def _sensor_vector(r: float, theta: float, cfg: SystemConfig) -> np.ndarray:
    return nf_steering(effective_range(r, cfg.h_a), theta, cfg.m_sensor, cfg.d_s, cfg.lambda_c).entries


def _parabolic_offset(left: float, mid: float, right: float) -> float:
    """Vertex offset of the parabola through three equally spaced samples, in steps."""
    denom = left - 2 * mid + right
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _refine(surface: np.ndarray, ranges: np.ndarray, thetas: np.ndarray, i: int, j: int
            ) -> PolarPosition | None:
    if not (0 < i < len(ranges) - 1 and 0 < j < len(thetas) - 1):
        return None
    di = _parabolic_offset(surface[i - 1, j], surface[i, j], surface[i + 1, j])
    dj = _parabolic_offset(surface[i, j - 1], surface[i, j], surface[i, j + 1])
    return PolarPosition(r=ranges[i] + di * (ranges[1] - ranges[0]),
                         theta=thetas[j] + dj * (thetas[1] - thetas[0]))


# ===== ML =====

def ml_statistic(pos: PolarPosition, y_s: np.ndarray, g: np.ndarray, cfg: SystemConfig) -> float:
    """
    Concentrated likelihood |a^H Y z*|^2 / (|a|^2 |z|^2), z^T = alpha_t^H G X;
    maximizing it minimizes the residual over the complex gain.
    """
    a = _sensor_vector(pos.r, pos.theta, cfg)
    z = star_steering(pos, cfg).entries.conj() @ g
    denom = float(np.real(np.vdot(a, a) * np.vdot(z, z)))
    if denom <= 0:
        return 0.0
    return float(abs(a.conj() @ y_s @ z.conj()) ** 2 / denom)


def ml_estimate(block: EchoBlock, grid: EstimatorGrid, sol: BeamSolution, profile: StarsProfile,
                cfg: SystemConfig, scn: Scenario, center: PolarPosition | None = None) -> PolarPosition:
    """Grid maximum of the concentrated likelihood plus one parabolic refinement."""
    g = profile.q_r[:, None] * bs_stars_channel(cfg) @ block.x_bar
    ranges, thetas = search_grid(grid, center or block.truth)
    surface = np.array([[ml_statistic(PolarPosition(r=r, theta=t), block.y_s, g, cfg) for t in thetas]
                        for r in ranges])
    i, j = np.unravel_index(int(np.argmax(surface)), surface.shape)
    best = PolarPosition(r=float(ranges[i]), theta=float(thetas[j]))
    refined = _refine(surface, ranges, thetas, i, j)
    if refined is not None and ml_statistic(refined, block.y_s, g, cfg) > surface[i, j]:
        return refined
    return best


# ===== MUSIC =====

def music_spectrum(y_s: np.ndarray, ranges: np.ndarray, thetas: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    cov = y_s @ y_s.conj().T / y_s.shape[1]
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    rank = int(np.sum(vals > 1e-12 * max(vals[-1], 1e-300)))
    if rank < len(vals):
        logger.debug("sample covariance rank %d of %d", rank, len(vals))
    noise_sub = vecs[:, :-1]   # one target
    spectrum = np.empty((len(ranges), len(thetas)))
    for i, r in enumerate(ranges):
        for j, t in enumerate(thetas):
            proj = noise_sub.conj().T @ _sensor_vector(r, t, cfg)
            spectrum[i, j] = 1.0 / max(float(np.real(np.vdot(proj, proj))), 1e-300)
    return spectrum


def music_estimate(block: EchoBlock, grid: EstimatorGrid, cfg: SystemConfig, scn: Scenario,
                   center: PolarPosition | None = None) -> PolarPosition:
    if block.y_s.shape[1] < 2:
        raise ValueError("MUSIC needs at least two snapshots")
    ranges, thetas = search_grid(grid, center or block.truth)
    spectrum = music_spectrum(block.y_s, ranges, thetas, cfg)
    i, j = np.unravel_index(int(np.argmax(spectrum)), spectrum.shape)
    return PolarPosition(r=float(ranges[i]), theta=float(thetas[j]))


def squared_error(estimate: PolarPosition | CartesianPosition, truth: PolarPosition | CartesianPosition) -> float:
    def cart(p):
        return p.to_cartesian() if isinstance(p, PolarPosition) else p
    e, t = cart(estimate), cart(truth)
    return (e.p_x - t.p_x) ** 2 + (e.p_y - t.p_y) ** 2


def rmse(trials: list[tuple[PolarPosition | CartesianPosition, PolarPosition | CartesianPosition]]) -> float:
    if not trials:
        raise ValueError("rmse needs at least one trial")
    return math.sqrt(sum(squared_error(e, t) for e, t in trials) / len(trials))
