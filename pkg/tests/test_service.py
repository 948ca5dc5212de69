"""
HTTP service tests.

 Group 1 - Index and presets
 Group 2 - SPEB endpoint and request validation
 Group 3 - Deployment and solve endpoints, error mapping
"""

import pytest
from fastapi.testclient import TestClient

from stars_isac.models import LAMBDA_28GHZ
from stars_isac.presets import PRESETS
from stars_isac.service import app

from conftest import OFFDIAG_RATIO_MAX

TINY = {"n_bs": 2, "m_star": 4, "m_sensor": 4}
NEAR = {"st_center_y": 1.0, "r_sen": 0.3, "l_slots": 16}


@pytest.fixture
def client():
    return TestClient(app)


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_root_lists_endpoints(client):
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["docs"] == "/docs"
    assert body["endpoints"]["solve"] == "POST /solve"


def test_presets(client):
    response = client.get("/presets")
    assert response.status_code == 200
    assert response.json()["presets"] == sorted(PRESETS)


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_speb_closed_form_bounds_exact(client):
    response = client.post("/speb", json={"system": TINY, "scenario": NEAR, "seed": 3})
    assert response.status_code == 200
    body = response.json()
    assert 0 < body["closed_form_speb"] <= body["exact_speb"] * (1 + 1e-9)
    assert body["j_closed_form"][0][1] == 0.0
    assert 0 <= body["offdiag_ratio"] <= OFFDIAG_RATIO_MAX


def test_odd_element_count_is_rejected(client):
    response = client.post("/speb", json={"system": {**TINY, "m_star": 5}, "scenario": NEAR})
    assert response.status_code == 422


def test_unreachable_sector_is_a_bad_request(client):
    scenario = {"st_center_x": 3.0, "st_center_y": 0.5, "r_sen": 0.2, "angle_min_deg": 80, "angle_max_deg": 100}
    response = client.post("/speb", json={"system": TINY, "scenario": scenario})
    assert response.status_code == 400
    assert "ConfigError" in response.json()["detail"]


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_deploy_returns_a_feasible_plan(client):
    response = client.post("/deploy", json={"system": TINY, "scenario": NEAR, "seed": 2,
                                            "solver": {"alg1_max_iter": 5}})
    assert response.status_code == 200
    plan = response.json()
    assert plan["m_r"] % 2 == 0 and 2 <= plan["m_r"] <= TINY["m_star"]
    assert plan["m_r"] * plan["d_s"] <= TINY["m_star"] * LAMBDA_28GHZ / 2 * (1 + 1e-7)


def test_unreachable_rate_is_a_conflict(client):
    response = client.post("/solve", json={"system": TINY, "scenario": {**NEAR, "r_min_db": 30.0},
                                           "solver": {"ao_max_iter": 1, "alg1_max_iter": 2}})
    assert response.status_code == 409
    assert "exceeds capacity" in response.json()["detail"]
