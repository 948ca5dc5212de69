"""
Coordinates, element placement and the polar/Cartesian FIM transform.

Arrays use the symmetric index set {-M/2, ..., M/2} (M+1 elements, centre
element at the origin of the array). Polar parameters are ordered
gamma = (theta, r) everywhere, matching the FIM block order.
"""

import math

import numpy as np

from .errors import DegeneratePositionError, GeometryError
from .models import ArrayKind, CartesianPosition, PolarPosition, SystemConfig


def element_indices(count: int) -> np.ndarray:
    """Symmetric indices -count/2..count/2 as floats."""
    return np.arange(count + 1, dtype=float) - count / 2


def element_positions(cfg: SystemConfig, array: ArrayKind) -> list[CartesianPosition]:
    if array is ArrayKind.STAR:
        idx, step, y = element_indices(cfg.m_star), cfg.d_r, 0.0
    elif array is ArrayKind.SENSOR:
        idx, step, y = element_indices(cfg.m_sensor), cfg.d_s, -cfg.h_a
    elif array is ArrayKind.BS:
        idx, step, y = element_indices(cfg.n_bs), cfg.d_b, -cfg.r_br
    else:
        raise ValueError(f"unknown array kind {array!r}")
    return [CartesianPosition(p_x=float(m * step), p_y=y) for m in idx]


def polar_from_cartesian(p: CartesianPosition) -> PolarPosition:
    if p.p_x == 0.0 and p.p_y == 0.0:
        raise GeometryError("the origin has no polar angle")
    return PolarPosition(r=math.hypot(p.p_x, p.p_y), theta=math.atan2(p.p_y, p.p_x))


def cartesian_from_polar(pos: PolarPosition) -> CartesianPosition:
    return pos.to_cartesian()


def effective_range(r: float, h_a: float) -> float:
    """Distance to the centre of the offset sensor array."""
    if r <= h_a:
        raise GeometryError(f"range {r} must exceed the sensor offset h_a={h_a}")
    return math.sqrt(r * r - h_a * h_a)


def jacobian_T(pos: PolarPosition) -> np.ndarray:
    """
    T[i, j] = d gamma_j / d eta_i with eta = (p_x, p_y), gamma = (theta, r).

    With this orientation J_eta = T J_gamma T^T. Columns run (theta, r), so
    det(T) = -1/r rather than 1/r; only T^-1 T^-T enters the SPEB, and it
    does not depend on the column order.
    """
    if pos.r == 0:
        raise GeometryError("jacobian is singular at r = 0")
    c, s, r = math.cos(pos.theta), math.sin(pos.theta), pos.r
    return np.array([[-s / r, c],
                     [c / r, s]])


def t_tilde(pos: CartesianPosition, T: np.ndarray) -> np.ndarray:
    """Scaled (T^T T)^-1-type weight: ((p_x+p_y)^2/(p_x^2 p_y^2)) T^-1 T^-T."""
    px, py = pos.p_x, pos.p_y
    if px * py == 0.0:
        raise DegeneratePositionError(f"position ({px}, {py}) lies on an axis")
    if px + py == 0.0:
        raise DegeneratePositionError(f"position ({px}, {py}) has p_x + p_y = 0")
    return ((px + py) ** 2 / (px * px * py * py)) * t_hat(T)


def t_hat(T: np.ndarray) -> np.ndarray:
    """T^-1 T^-T; SPEB = sum_i J_ii^-1 [t_hat]_ii for diagonal J."""
    t_inv = np.linalg.inv(T)
    out = t_inv @ t_inv.T
    return 0.5 * (out + out.T)


def speb_prefactor(pos: CartesianPosition) -> float:
    """p_x^2 p_y^2 / (p_x + p_y)^2, the scalar pulled out of t_tilde."""
    px, py = pos.p_x, pos.p_y
    if px + py == 0.0:
        raise DegeneratePositionError(f"position ({px}, {py}) has p_x + p_y = 0")
    return (px * px * py * py) / (px + py) ** 2
