"""
Conic backend tests.

 Group 1 - Trace-inverse epigraph on problems with known optima
 Group 2 - Geometric programs
 Group 3 - Status translation and problem dumps
"""

import cvxpy as cp
import numpy as np
import pytest

from stars_isac import conic
from stars_isac.conic import (
    GpProblem,
    SdpProblem,
    enable_dump,
    require_optimal,
    solve_gp,
    solve_sdp,
    tr_inverse_epigraph,
)
from stars_isac.errors import InfeasibleError
from stars_isac.models import SolveStatus


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_trace_inverse_under_trace_budget():
    u = cp.Variable((2, 2), symmetric=True, name="u")
    _, cons, term = tr_inverse_epigraph(u)
    report = require_optimal(solve_sdp(SdpProblem(name="trinv", objective=cp.Minimize(term),
                                                  constraints=cons + [cp.trace(u) <= 2])), "toy")
    assert report.objective == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(report.values["u"], np.eye(2), atol=1e-4)


def test_weighted_trace_inverse():
    # min 1/u1 + 4/u2 s.t. u1 + u2 <= 3 -> u = (1, 2), value 3
    u = cp.Variable((2, 2), symmetric=True, name="u")
    _, cons, term = tr_inverse_epigraph(u, weights=np.array([1.0, 4.0]))
    report = require_optimal(solve_sdp(SdpProblem(name="wtrinv", objective=cp.Minimize(term),
                                                  constraints=cons + [cp.trace(u) <= 3])), "toy")
    assert report.objective == pytest.approx(3.0, abs=1e-6)
    assert np.diag(report.values["u"]) == pytest.approx([1.0, 2.0], abs=1e-4)


def test_hermitian_psd_variable():
    # max Re(x12) over 2x2 Hermitian PSD with unit diagonal -> 1
    x = cp.Variable((2, 2), hermitian=True, name="x")
    problem = SdpProblem(name="herm", objective=cp.Maximize(cp.real(x[0, 1])),
                         constraints=[x >> 0, cp.real(cp.diag(x)) == 1])
    report = require_optimal(solve_sdp(problem), "toy")
    assert report.objective == pytest.approx(1.0, abs=1e-6)


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_posynomial_minimum():
    x = cp.Variable(pos=True, name="x")
    report = require_optimal(solve_gp(GpProblem(name="gp", objective=cp.Minimize(x + 1 / x),
                                                constraints=[x <= 10])), "toy")
    assert report.objective == pytest.approx(2.0, abs=1e-6)
    assert report.values["x"] == pytest.approx(1.0, abs=1e-3)


def test_non_dgp_problem_rejected():
    x = cp.Variable(pos=True, name="x")
    with pytest.raises(ValueError):
        solve_gp(GpProblem(name="bad", objective=cp.Minimize(x - 1), constraints=[]))


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_infeasible_problem_maps_to_error():
    x = cp.Variable(name="x")
    report = solve_sdp(SdpProblem(name="infeasible", objective=cp.Minimize(x),
                                  constraints=[x >= 1, x <= 0]))
    assert report.status is SolveStatus.INFEASIBLE
    with pytest.raises(InfeasibleError):
        require_optimal(report, "toy")


def test_dump_writes_problem_text(tmp_path):
    enable_dump(tmp_path)
    try:
        x = cp.Variable(name="x")
        solve_sdp(SdpProblem(name="dumped", objective=cp.Minimize(x), constraints=[x >= 1]))
    finally:
        enable_dump(None)
    files = list(tmp_path.glob("*_dumped.txt"))
    assert len(files) == 1
    assert files[0].read_text(encoding="utf-8").startswith("# dumped")
    assert conic._dump_dir is None
