"""
Process settings loaded from the environment.

Values come from real environment variables or from a `.env` file in the
working directory. Nothing here is experiment-specific; experiment knobs
live in the TOML config files handled by `models.ExperimentConfig`.
"""

import logging
import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .models import SolverSettings

# Load environment variables from .env file (no-op when absent)
load_dotenv()

logger = logging.getLogger(__name__)

SOLVERS = ("CLARABEL", "SCS")


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    output_dir: str = "results"
    threads: int = Field(1, ge=1, le=256)
    solver: str = Field("CLARABEL", pattern="^(CLARABEL|SCS)$")
    log_level: str = Field("INFO", pattern="^(DEBUG|INFO|WARNING|ERROR)$")
    sdp_tol: float = Field(1e-8, gt=0, lt=1e-2)
    gp_tol: float = Field(1e-9, gt=0, lt=1e-2)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Build the settings once per process.

    Also used as a FastAPI dependency, so endpoints share the same object.
    """
    raw = {
        "output_dir": os.getenv("STARS_OUTPUT_DIR", "results"),
        "threads": os.getenv("STARS_THREADS", "1"),
        "solver": os.getenv("STARS_SOLVER", "CLARABEL").upper(),
        "log_level": os.getenv("STARS_LOG_LEVEL", "INFO").upper(),
        "sdp_tol": os.getenv("STARS_SDP_TOL", "1e-8"),
        "gp_tol": os.getenv("STARS_GP_TOL", "1e-9"),
    }
    try:
        settings = Settings(**raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid STARS_* environment: {exc}") from exc
    logger.debug("settings loaded: %s", settings)
    return settings


def configure_logging(level: str | None = None) -> None:
    """Install a single stderr handler on the root logger."""
    logging.basicConfig(
        level=level or get_settings().log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def solver_defaults(requested: SolverSettings, settings: Settings | None = None) -> SolverSettings:
    """Fill unset solver knobs from the process settings."""
    settings = settings or get_settings()
    return requested.model_copy(update={
        "solver": requested.solver or settings.solver,
        "sdp_tol": requested.sdp_tol or settings.sdp_tol,
        "gp_tol": requested.gp_tol or settings.gp_tol,
    })
