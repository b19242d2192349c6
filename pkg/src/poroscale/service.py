"""HTTP facade over the experiment runners.

Error contract: configuration problems (bad config shape, unknown names,
inadmissible parameter combinations) map to 400; violations of the
solvability hypotheses (smallness gates) map to 409, because the request
was well-formed but the refusal is a meaningful result; numerical
failures during a run map to 500 with the exception detail.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .coefficients import POROSITY_LAW_ARITY, SOURCE_LAW_NAMES, STATE_LAW_ARITY
from .config import EXPERIMENT_NAMES, RunConfig, config_hash
from .errors import ConfigurationError, HypothesisGateError, NumericalError
from .experiments import run_experiment
from .geometry import MACRO_EXPR_FAMILIES
from .mms import MMS_CASE_NAMES


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    out_dir: Optional[str] = None


class RunResponse(BaseModel):
    config_hash: str
    report: dict


def _error_payload(category: str, exc: Exception) -> dict:
    return {
        "detail": {
            "category": category,
            "type": type(exc).__name__,
            "message": str(exc),
        }
    }


def create_app() -> FastAPI:
    app = FastAPI(title="poroscale", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        errors = [
            {
                "loc": [str(part) for part in e.get("loc", ())],
                "msg": str(e.get("msg", "")),
                "type": str(e.get("type", "")),
            }
            for e in exc.errors()
        ]
        return JSONResponse(
            status_code=400,
            content={
                "detail": {
                    "category": "configuration",
                    "type": "RequestValidationError",
                    "errors": errors,
                }
            },
        )

    @app.exception_handler(ConfigurationError)
    async def _config(request: Request, exc: ConfigurationError):
        return JSONResponse(status_code=400, content=_error_payload("configuration", exc))

    @app.exception_handler(ValueError)
    async def _value(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content=_error_payload("configuration", exc))

    @app.exception_handler(HypothesisGateError)
    async def _gate(request: Request, exc: HypothesisGateError):
        return JSONResponse(
            status_code=409, content=_error_payload("hypothesis-gate", exc)
        )

    @app.exception_handler(NumericalError)
    async def _numerical(request: Request, exc: NumericalError):
        return JSONResponse(status_code=500, content=_error_payload("numerical", exc))

    @app.get("/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.get("/catalogs")
    async def catalogs():
        return {
            "experiments": list(EXPERIMENT_NAMES),
            "state_laws": {k: list(v) for k, v in STATE_LAW_ARITY.items()},
            "source_laws": list(SOURCE_LAW_NAMES),
            "porosity_laws": dict(POROSITY_LAW_ARITY),
            "macro_expressions": list(MACRO_EXPR_FAMILIES),
            "mms_cases": list(MMS_CASE_NAMES),
        }

    @app.post("/experiments/run", response_model=RunResponse)
    async def run(request: RunRequest) -> RunResponse:
        report = run_experiment(request.config, request.out_dir)
        return RunResponse(config_hash=config_hash(request.config), report=report)

    return app
