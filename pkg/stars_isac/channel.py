"""
Near-field steering vectors, their derivatives, and the deterministic
BS-STARS and STARS-CU channels.
"""

import math
from functools import lru_cache

import numpy as np

from .geometry import effective_range, element_indices
from .models import Axis, ChannelSet, PolarPosition, SteeringVector, SystemConfig


def nf_steering(r: float, theta: float, count: int, interval: float, lambda_c: float) -> SteeringVector:
    """Quadratic (Fresnel) phase model; r may be math.inf for a plane wave."""
    if not r > 0:
        raise ValueError(f"range must be positive, got {r}")
    if count < 2 or count % 2:
        raise ValueError(f"count must be even and >= 2, got {count}")
    m = element_indices(count)
    phase = -(2 * math.pi / lambda_c) * (-m * interval * math.cos(theta) + (m * interval) ** 2 / (2 * r))
    return SteeringVector(entries=np.exp(1j * phase), r=r, theta=theta, count=count,
                          interval=interval, lambda_c=lambda_c)


def exact_steering(r: float, theta: float, count: int, interval: float, lambda_c: float) -> SteeringVector:
    """Spherical-wavefront phases from exact element distances."""
    if not (r > 0 and math.isfinite(r)):
        raise ValueError(f"range must be positive and finite, got {r}")
    m = element_indices(count)
    dist = np.sqrt(r * r - 2 * r * m * interval * math.cos(theta) + (m * interval) ** 2)
    phase = -(2 * math.pi / lambda_c) * (dist - r)
    return SteeringVector(entries=np.exp(1j * phase), r=r, theta=theta, count=count,
                          interval=interval, lambda_c=lambda_c)


def sensor_steering(r: float, theta: float, cfg: SystemConfig, exact: bool = False) -> SteeringVector:
    builder = exact_steering if exact else nf_steering
    return builder(effective_range(r, cfg.h_a), theta, cfg.m_sensor, cfg.d_s, cfg.lambda_c)


def star_steering(pos: PolarPosition, cfg: SystemConfig, exact: bool = False) -> SteeringVector:
    builder = exact_steering if exact else nf_steering
    return builder(pos.r, pos.theta, cfg.m_star, cfg.d_r, cfg.lambda_c)


def steering_derivative(sv: SteeringVector, axis: Axis) -> np.ndarray:
    """Analytic derivative of the quadratic-phase model w.r.t. its own (r, theta)."""
    m = element_indices(sv.count)
    if axis is Axis.ANGLE:
        factor = -1j * 2 * math.pi * sv.interval * math.sin(sv.theta) / sv.lambda_c * m
    elif axis is Axis.RANGE:
        if math.isinf(sv.r):
            return np.zeros_like(sv.entries)
        factor = 1j * math.pi * sv.interval ** 2 / (sv.lambda_c * sv.r ** 2) * m ** 2
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return factor * sv.entries


@lru_cache(maxsize=64)
def bs_stars_channel(cfg: SystemConfig) -> np.ndarray:
    """(M+1) x (N+1) line-of-sight channel; read-only, cached per config."""
    x_star = element_indices(cfg.m_star) * cfg.d_r
    x_bs = element_indices(cfg.n_bs) * cfg.d_b
    dist = np.sqrt((x_star[:, None] - x_bs[None, :]) ** 2 + cfg.r_br ** 2)
    excess = dist - cfg.r_br
    if not cfg.literal_bs_phase:
        excess = (2 * math.pi / cfg.lambda_c) * excess
    h = cfg.lambda_c / (4 * math.pi * dist) * np.exp(-1j * excess)
    h.setflags(write=False)
    return h


def cu_channel(pos: PolarPosition, cfg: SystemConfig) -> np.ndarray:
    """
    STARS-to-CU channel. The CU sits at (-r cos(theta), -r sin(theta)), so the
    steering angle is mirrored to pi - theta.
    """
    x_star = element_indices(cfg.m_star) * cfg.d_r
    cu_x, cu_y = -pos.r * math.cos(pos.theta), -pos.r * math.sin(pos.theta)
    dist = np.hypot(cu_x - x_star, cu_y)
    beta = cfg.lambda_c / (4 * math.pi * dist)
    alpha = nf_steering(pos.r, math.pi - pos.theta, cfg.m_star, cfg.d_r, cfg.lambda_c).entries
    return beta * alpha


def channel_set(cfg: SystemConfig, cu: PolarPosition) -> ChannelSet:
    return ChannelSet(h_br=bs_stars_channel(cfg), g_c=cu_channel(cu, cfg))


def reflection_coefficient(r: float, lambda_c: float, rcs: float = 1.0) -> complex:
    """Round-trip free-space amplitude for a point target of the given RCS, phase 0."""
    return complex(lambda_c * math.sqrt(rcs) / ((4 * math.pi) ** 1.5 * r * r))
