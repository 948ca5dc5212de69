"""
HTTP facade over the library.

Run with:  uvicorn stars_isac.service:app --reload
Then open http://localhost:8000/docs for the interactive schema.
"""

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, status
from pydantic import BaseModel, Field, ValidationError

from . import __version__
from .beamform import TraceRow, initial_plan
from .bench import draw_scenario, initial_beam, run_scheme
from .deploy import run_algorithm1
from .errors import InfeasibleError, SolverError, StarsIsacError
from .fim import closed_form_fim, exact_fim
from .models import (
    DeploymentPlan,
    PolarPosition,
    ScenarioTemplate,
    Scheme,
    SolverSettings,
    SystemConfig,
)
from .presets import PRESETS
from .settings import Settings, get_settings, solver_defaults

app = FastAPI(
    title="STARS near-field ISAC",
    description="Sensing bound, sensor deployment and joint beamforming",
    version=__version__,
)


# ===== SCHEMAS =====

class ScenarioRequest(BaseModel):
    """System geometry plus the template one scenario is drawn from."""
    system: SystemConfig = Field(default_factory=SystemConfig)
    scenario: ScenarioTemplate = Field(default_factory=ScenarioTemplate)
    seed: int = Field(0, ge=0)


class DeployRequest(ScenarioRequest):
    solver: SolverSettings = Field(default_factory=SolverSettings)


class SolveRequest(DeployRequest):
    scheme: Scheme = Scheme.PROPOSED


class SpebResponse(BaseModel):
    st: PolarPosition
    exact_speb: float
    closed_form_speb: float | None
    offdiag_ratio: float
    j_exact: list[list[float]]
    j_closed_form: list[list[float]]


class SolveResponse(BaseModel):
    st: PolarPosition
    plan: DeploymentPlan
    cf: float
    speb: float
    rate: float
    iterations: int
    rank_one: bool
    trace: list[TraceRow]


class PresetList(BaseModel):
    presets: list[str]


# ===== HELPERS =====

def _http_error(exc: Exception) -> HTTPException:
    """Map a library error to the status code the client should see."""
    if isinstance(exc, InfeasibleError):
        return HTTPException(status_code=status.HTTP_409_CONFLICT, detail=str(exc))
    if isinstance(exc, SolverError):
        return HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(exc))
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=f"{type(exc).__name__}: {exc}")


def _finite(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


# ===== ENDPOINTS =====

@app.get("/")
def read_root(settings: Settings = Depends(get_settings)):
    """Usage index."""
    return {
        "message": "STARS near-field ISAC service",
        "endpoints": {
            "list_presets": "GET /presets",
            "speb": "POST /speb",
            "deploy": "POST /deploy",
            "solve": "POST /solve",
        },
        "solver": settings.solver,
        "docs": "/docs",
    }


@app.get("/presets", response_model=PresetList)
def list_presets():
    return PresetList(presets=sorted(PRESETS))


@app.post("/speb", response_model=SpebResponse)
def speb(req: ScenarioRequest):
    """Exact and closed-form FIM at the initial beamformer."""
    try:
        scn = draw_scenario(req.scenario, req.system, req.seed)
        sol, profile = initial_beam(req.system, scn)
        exact = exact_fim(sol.rx, profile, scn.st, scn, req.system)
        closed = closed_form_fim(sol.rx, profile, scn.st, scn, req.system)
    except (StarsIsacError, ValidationError) as exc:
        raise _http_error(exc) from exc
    if not np.isfinite(exact.speb):
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST,
                            detail="Fisher information is singular for this scenario")
    return SpebResponse(
        st=scn.st,
        exact_speb=exact.speb,
        closed_form_speb=_finite(closed.speb),
        offdiag_ratio=exact.offdiag_ratio,
        j_exact=exact.j_polar.tolist(),
        j_closed_form=closed.j_polar.tolist(),
    )


@app.post("/deploy", response_model=DeploymentPlan)
def deploy(req: DeployRequest, settings: Settings = Depends(get_settings)):
    """Sensor count and interval for the initial beamformer."""
    try:
        scn = draw_scenario(req.scenario, req.system, req.seed)
        sol, profile = initial_beam(req.system, scn)
        return run_algorithm1(sol.rx, profile, scn.st, scn, req.system, initial_plan(req.system),
                              solver_defaults(req.solver, settings))
    except (StarsIsacError, ValidationError) as exc:
        raise _http_error(exc) from exc


@app.post("/solve", response_model=SolveResponse)
def solve(req: SolveRequest, settings: Settings = Depends(get_settings)):
    """Full alternating optimization for one scheme."""
    try:
        scn = draw_scenario(req.scenario, req.system, req.seed)
        sol = run_scheme(req.scheme, req.system, scn, req.seed, solver_defaults(req.solver, settings))
    except (StarsIsacError, ValidationError) as exc:
        raise _http_error(exc) from exc
    return SolveResponse(st=scn.st, plan=sol.plan, cf=sol.cf, speb=sol.speb, rate=sol.rate,
                         iterations=sol.iterations, rank_one=sol.rank_one, trace=sol.trace)
