"""HTTP service exposing the runners.

POST a run configuration to /solve, /cascade-trace, /validate or /optimize;
the response carries the summary plus every artifact (JSON payloads inline,
CSV as text) so a thin client can persist byte-identical files.  Config
errors map to 400 with the offending field path, numerical failures to 409.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from . import __version__
from .config import RunConfig, parse_config
from .errors import ConfigError, ConvergenceError, JumpBsdeError, StepSizeError
from .runners import run_cascade_trace, run_optimize, run_solve, run_validate

app = FastAPI(title="jumpbsde", version=__version__)


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: dict


class OptimizeRequest(RunRequest):
    x: Optional[float] = None


class RunResponse(BaseModel):
    status: str
    summary: dict
    trace: Optional[dict] = None
    report: Optional[dict] = None
    csv: dict[str, str] = {}


def _run(runner, payload: RunRequest, **kwargs) -> RunResponse:
    try:
        cfg: RunConfig = parse_config(payload.config)
        result = runner(cfg, **kwargs)
    except ConfigError as exc:
        raise HTTPException(status_code=400,
                            detail={"kind": "config", "path": exc.path,
                                    "message": str(exc)})
    except StepSizeError as exc:
        # a time-step violation is a configuration problem: report the
        # smallest admissible n_steps
        raise HTTPException(status_code=400,
                            detail={"kind": "config", "path": "lattice.n_steps",
                                    "message": str(exc),
                                    "suggested_n_steps": exc.suggested_n_steps})
    except ConvergenceError as exc:
        raise HTTPException(status_code=409,
                            detail={"kind": "convergence", "message": str(exc)})
    except JumpBsdeError as exc:
        raise HTTPException(status_code=409,
                            detail={"kind": type(exc).__name__, "message": str(exc)})
    return RunResponse(status="ok", summary=result["summary"],
                       trace=result.get("trace"), report=result.get("report"),
                       csv=result.get("csv", {}))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/solve", response_model=RunResponse)
def solve_endpoint(payload: RunRequest) -> RunResponse:
    return _run(run_solve, payload)


@app.post("/cascade-trace", response_model=RunResponse)
def cascade_trace_endpoint(payload: RunRequest) -> RunResponse:
    return _run(run_cascade_trace, payload)


@app.post("/validate", response_model=RunResponse)
def validate_endpoint(payload: RunRequest) -> RunResponse:
    return _run(run_validate, payload)


@app.post("/optimize", response_model=RunResponse)
def optimize_endpoint(payload: OptimizeRequest) -> RunResponse:
    return _run(run_optimize, payload, x=payload.x)
