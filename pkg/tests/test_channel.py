"""
Channel model tests.

 Group 1 - Steering vectors (quadratic model, exact spherical model, plane wave)
 Group 2 - Analytic derivatives against central differences
 Group 3 - BS-STARS and STARS-CU channels, reflection coefficient
"""

import math

import numpy as np
import pytest

from stars_isac.channel import (
    bs_stars_channel,
    channel_set,
    cu_channel,
    exact_steering,
    nf_steering,
    reflection_coefficient,
    sensor_steering,
    steering_derivative,
)
from stars_isac.models import LAMBDA_28GHZ, Axis, PolarPosition

LAM = LAMBDA_28GHZ
D = LAM / 2


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_nf_steering_unit_modulus_and_centre_phase():
    sv = nf_steering(1.0, 1.1, 8, D, LAM)
    assert sv.entries.shape == (9,)
    assert np.allclose(np.abs(sv.entries), 1.0)
    assert sv.entries[4] == pytest.approx(1.0)


def test_exact_and_quadratic_models_agree_far_away():
    far_nf = nf_steering(50.0, 1.0, 8, D, LAM).entries
    far_exact = exact_steering(50.0, 1.0, 8, D, LAM).entries
    assert np.allclose(far_nf, far_exact, atol=1e-3)


def test_plane_wave_limit_has_linear_phase():
    sv = nf_steering(math.inf, 0.7, 4, D, LAM)
    m = np.arange(-2, 3)
    expected = np.exp(1j * 2 * math.pi / LAM * m * D * math.cos(0.7))
    assert np.allclose(sv.entries, expected)


@pytest.mark.parametrize("count", [0, 3])
def test_invalid_count(count):
    with pytest.raises(ValueError):
        nf_steering(1.0, 1.0, count, D, LAM)


def test_nonpositive_range_rejected():
    with pytest.raises(ValueError):
        nf_steering(0.0, 1.0, 4, D, LAM)


def test_sensor_steering_uses_effective_range(tiny_cfg):
    sv = sensor_steering(1.0, 1.2, tiny_cfg)
    assert sv.r == pytest.approx(math.sqrt(1.0 - tiny_cfg.h_a ** 2))


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_angle_derivative_matches_central_difference():
    r, theta, h = 1.5, 1.0, 1e-6
    sv = nf_steering(r, theta, 8, D, LAM)
    fd = (nf_steering(r, theta + h, 8, D, LAM).entries - nf_steering(r, theta - h, 8, D, LAM).entries) / (2 * h)
    assert np.allclose(steering_derivative(sv, Axis.ANGLE), fd, rtol=1e-5, atol=1e-6)


def test_range_derivative_matches_central_difference():
    r, theta, h = 0.8, 1.3, 1e-7
    sv = nf_steering(r, theta, 8, D, LAM)
    fd = (nf_steering(r + h, theta, 8, D, LAM).entries - nf_steering(r - h, theta, 8, D, LAM).entries) / (2 * h)
    assert np.allclose(steering_derivative(sv, Axis.RANGE), fd, rtol=1e-5, atol=1e-6)


def test_range_derivative_vanishes_for_plane_wave():
    sv = nf_steering(math.inf, 1.0, 4, D, LAM)
    assert not np.any(steering_derivative(sv, Axis.RANGE))


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_bs_channel_shape_cached_and_read_only(tiny_cfg):
    h = bs_stars_channel(tiny_cfg)
    assert h.shape == (tiny_cfg.m_star + 1, tiny_cfg.n_bs + 1)
    assert bs_stars_channel(tiny_cfg) is h
    with pytest.raises(ValueError):
        h[0, 0] = 0.0


def test_bs_channel_centre_gain(tiny_cfg):
    h = bs_stars_channel(tiny_cfg)
    centre = h[tiny_cfg.m_star // 2, tiny_cfg.n_bs // 2]
    assert abs(centre) == pytest.approx(tiny_cfg.lambda_c / (4 * math.pi * tiny_cfg.r_br))
    assert centre.imag == pytest.approx(0.0, abs=1e-15)


def test_cu_channel_centre_gain(tiny_cfg):
    cu = PolarPosition(r=2.0, theta=1.9)
    g = cu_channel(cu, tiny_cfg)
    assert abs(g[tiny_cfg.m_star // 2]) == pytest.approx(tiny_cfg.lambda_c / (4 * math.pi * 2.0))
    assert channel_set(tiny_cfg, cu).g_c.shape == (tiny_cfg.m_star + 1,)


def test_reflection_coefficient_round_trip_loss():
    a1 = reflection_coefficient(1.0, LAM)
    a2 = reflection_coefficient(2.0, LAM)
    assert a1 == pytest.approx(LAM / (4 * math.pi) ** 1.5)
    assert abs(a1) / abs(a2) == pytest.approx(4.0)
    assert reflection_coefficient(1.0, LAM, rcs=4.0) == pytest.approx(2 * a1)
