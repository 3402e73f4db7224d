"""FastAPI application wrapping the imputation engine.

Run with: uvicorn dualimpute.service:create_app --factory
or via the CLI: dualimpute serve
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, DataError, NumericalError
from . import handlers
from . import schemas as sc


def create_app() -> FastAPI:
    app = FastAPI(title="dualimpute", version=__version__,
                  description="Dual-path missing-data imputation service")

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(DataError)
    async def _data_error(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(NumericalError)
    async def _numerical_error(request: Request, exc: NumericalError):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return handlers.health()

    @app.post("/mask", response_model=sc.MaskResponse)
    def mask(req: sc.MaskRequest):
        return handlers.do_mask(req)

    @app.post("/synth", response_model=sc.SynthResponse)
    def synth(req: sc.SynthRequest):
        return handlers.do_synth(req)

    @app.post("/train", response_model=sc.TrainResponse)
    def train(req: sc.TrainRequest):
        return handlers.do_train(req)

    @app.post("/impute", response_model=sc.ImputeResponse)
    def impute(req: sc.ImputeRequest):
        return handlers.do_impute(req)

    @app.post("/evaluate", response_model=sc.EvaluateResponse)
    def evaluate(req: sc.EvaluateRequest):
        return handlers.do_evaluate(req)

    @app.post("/benchmark", response_model=sc.BenchmarkResponse)
    def benchmark(req: sc.BenchmarkRequest):
        return handlers.do_benchmark(req)

    return app
