"""HTTP front end: POST /v1/answer and GET /healthz."""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, Response

from .pipeline import Backends, GenerationError, PipelineConfig, answer
from .request_parser import InferenceRequest


def create_app(config: PipelineConfig, backends: Backends) -> FastAPI:
    app = FastAPI(title="zerodex", docs_url=None, redoc_url=None)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/answer")
    async def post_answer(request: Request, timings: int = 1):
        # parsed by hand so every malformed body maps to a 400, not a 422
        try:
            payload = json.loads(await request.body())
            if not isinstance(payload, dict):
                raise ValueError("body must be a JSON object")
            req = InferenceRequest.from_dict(payload)
        except (ValueError, TypeError) as exc:
            return JSONResponse({"error": f"bad request: {exc}"}, status_code=400)
        try:
            result = await run_in_threadpool(answer, req, config, backends)
        except GenerationError as exc:
            return JSONResponse(
                {"error": f"generation failed: {exc}", "trace": [r.to_dict(bool(timings)) for r in exc.trace]},
                status_code=502,
            )
        return Response(result.to_json(bool(timings)), media_type="application/json")

    return app


def serve(config: PipelineConfig, backends: Backends, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(create_app(config, backends), host=host, port=port, log_level="info")
