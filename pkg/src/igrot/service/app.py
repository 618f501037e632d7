"""FastAPI application wrapping the retrieval workflows.

Errors surface as a JSON envelope ``{"error": {"kind", "message"}}`` where
kind is ``validation`` (HTTP 422) or ``io`` (HTTP 400); the CLI maps these to
exit codes 1 and 2.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, workflows
from ..errors import FormatError, ValidationError
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="igrot", version=__version__)

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=422, content={"error": {"kind": "validation", "message": str(exc)}}
        )

    @app.exception_handler(FormatError)
    async def _format(request: Request, exc: FormatError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": {"kind": "io", "message": str(exc)}}
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest) -> dict:
        return workflows.run_synth(
            req.seed, req.n_queries, req.pool_size, req.dim, req.noise, req.out_dir
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest) -> dict:
        return workflows.run_train(**req.model_dump())

    @app.post("/index", response_model=schemas.IndexResponse)
    def index(req: schemas.IndexRequest) -> dict:
        return workflows.run_build_index(
            req.checkpoint, req.images, req.null_text, req.mode, req.out
        )

    @app.post("/search", response_model=schemas.SearchResponse)
    def search(req: schemas.SearchRequest) -> dict:
        return workflows.run_search(
            req.index, req.checkpoint, req.triplets, req.images, req.texts,
            req.null_text, req.out, k=req.k, threads=req.threads,
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_(req: schemas.EvalRequest) -> dict:
        return workflows.run_eval(req.run, req.qrels, req.metrics, req.out)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest) -> dict:
        return workflows.run_gradcheck(seed=req.seed, tol=req.tol, eps=req.eps)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> dict:
        result = workflows.run_report([i.model_dump() for i in req.inputs], req.out)
        return {"csv": result["csv"], "json_mirror": result["json"], "groups": result["groups"]}

    return app
