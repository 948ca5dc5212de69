"""
Conic backend: thin contracts over cvxpy for the SDPs and GPs the
optimizers build.

Problems are assembled by the callers with cvxpy expressions; this module
owns solver selection, tolerances, status translation and debug dumps.
"""

import itertools
import logging
import math
from pathlib import Path

import cvxpy as cp
import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import InfeasibleError, SolverError
from .models import SolveReport, SolveStatus
from .settings import SOLVERS, get_settings

logger = logging.getLogger(__name__)

_STATUS = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.OPTIMAL_INACCURATE: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: SolveStatus.UNBOUNDED,
    cp.USER_LIMIT: SolveStatus.MAX_ITER,
}

_dump_dir: Path | None = None
_dump_counter = itertools.count()


class SdpProblem(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    objective: cp.Minimize | cp.Maximize
    constraints: list


class GpProblem(BaseModel):
    """Objective and constraints must be log-log convex (cvxpy DGP rules)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    objective: cp.Minimize | cp.Maximize
    constraints: list


# ===== DEBUG DUMPS =====

def enable_dump(directory: str | Path | None) -> None:
    """Write the text form of every solved problem under `directory`; None disables."""
    global _dump_dir
    _dump_dir = Path(directory) if directory is not None else None
    if _dump_dir is not None:
        _dump_dir.mkdir(parents=True, exist_ok=True)


def dump_problem(problem: cp.Problem, name: str, directory: Path) -> Path:
    path = directory / f"{next(_dump_counter):05d}_{name}.txt"
    path.write_text(f"# {name}\n{problem}\n", encoding="utf-8")
    return path


# ===== BUILDING BLOCKS =====

def tr_inverse_epigraph(u: cp.Expression, weights: np.ndarray | None = None
                        ) -> tuple[cp.Variable, list, cp.Expression]:
    """
    Epigraph of tr(diag(weights) U^-1).

    Returns W, the constraint [[W, I], [I, U]] >= 0 and the objective term;
    by the Schur complement W >= U^-1, tight at the optimum.
    """
    dim = u.shape[0]
    w = cp.Variable((dim, dim), symmetric=True)
    eye = np.eye(dim)
    block = cp.bmat([[w, eye], [eye, u]])
    constraint = 0.5 * (block + block.T) >> 0
    if weights is None:
        term = cp.trace(w)
    else:
        term = cp.sum(cp.multiply(np.asarray(weights, dtype=float), cp.diag(w)))
    return w, [constraint], term


# ===== SOLVE =====

def _solver_options(solver: str, tol: float) -> dict:
    if solver == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "max_iter": 500}
    # first-order method: tighter than ~1e-7 mostly burns iterations
    eps = max(tol, 1e-7)
    return {"eps_abs": eps, "eps_rel": eps, "max_iters": 100_000}


def _duality_gap(problem: cp.Problem) -> float:
    stats = getattr(problem.solver_stats, "extra_stats", None)
    primal = getattr(stats, "obj_val", None)
    dual = getattr(stats, "obj_val_dual", None)
    if primal is None or dual is None:
        return math.nan
    return abs(float(primal) - float(dual))


def _solve(problem: cp.Problem, name: str, tol: float, solver: str | None, gp: bool) -> SolveReport:
    first = solver or get_settings().solver
    order = [first] + [s for s in SOLVERS if s != first]
    if _dump_dir is not None:
        dump_problem(problem, name, _dump_dir)

    used = ""
    for candidate in order:
        try:
            problem.solve(solver=candidate, gp=gp, **_solver_options(candidate, tol))
        except cp.error.SolverError as exc:
            logger.warning("%s: solver %s failed (%s), trying next", name, candidate, exc)
            continue
        used = candidate
        break

    if not used:
        return SolveReport(status=SolveStatus.MAX_ITER, objective=math.nan, solver="none")

    status = _STATUS.get(problem.status, SolveStatus.MAX_ITER)
    if problem.status == cp.OPTIMAL_INACCURATE:
        logger.warning("%s: %s returned an inaccurate optimum", name, used)
    values = {v.name(): v.value for v in problem.variables()}
    stats = problem.solver_stats
    report = SolveReport(
        status=status,
        objective=float(problem.value) if problem.value is not None else math.nan,
        values=values,
        duality_gap=_duality_gap(problem),
        iterations=int(stats.num_iters or 0) if stats is not None else 0,
        solver=used,
    )
    logger.debug("%s: %s status=%s objective=%.6g", name, used, status.value, report.objective)
    return report


def solve_sdp(p: SdpProblem, tol: float | None = None, solver: str | None = None) -> SolveReport:
    problem = cp.Problem(p.objective, p.constraints)
    return _solve(problem, p.name, tol or get_settings().sdp_tol, solver, gp=False)


def solve_gp(p: GpProblem, tol: float | None = None, solver: str | None = None) -> SolveReport:
    problem = cp.Problem(p.objective, p.constraints)
    if not problem.is_dgp():
        raise ValueError(f"{p.name} is not a geometric program")
    return _solve(problem, p.name, tol or get_settings().gp_tol, solver, gp=True)


def require_optimal(report: SolveReport, what: str) -> SolveReport:
    """Raise the matching library error unless the report is OPTIMAL."""
    if report.status is SolveStatus.OPTIMAL:
        return report
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError(f"{what} is infeasible", report)
    raise SolverError(f"{what} ended with status {report.status.value}", report)
