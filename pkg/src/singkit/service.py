"""Read-only synthesis service for the choir console.

Serving never mutates model state: checkpoints are loaded once and every
request runs inference only. Synthesis work funnels through a small worker
pool with a bounded queue; overflow answers 429 rather than queueing
without limit, and every error body carries a request id.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .audio import wav_bytes
from .errors import (
    ConfigError,
    DegenerateAverageError,
    EmbeddingError,
    MisalignmentError,
    SingkitError,
    WeightError,
)
from .registry import ModelRegistry

CLIENT_ERRORS = (ConfigError, WeightError, EmbeddingError, MisalignmentError,
                 DegenerateAverageError)


@dataclass(frozen=True)
class ServiceConfig:
    workers: int = 2
    queue_depth: int = 16
    timeout_s: float = 120.0


class PrototypeInfo(BaseModel):
    id: str
    name: str


class MelodyInfo(BaseModel):
    id: str
    name: str
    frames: int | None = None


class SynthesizeRequest(BaseModel):
    weights: list[float] = Field(min_length=1)
    melody_id: str
    seed: int  # required for reproducibility bookkeeping; synthesis is deterministic


class ChoirSingerModel(BaseModel):
    weights: list[float] = Field(min_length=1)
    detune_cents: float = 0.0
    onset_shift_ms: float = 0.0
    gain: float = 1.0


class ChoirSpecModel(BaseModel):
    seed: int
    singers: list[ChoirSingerModel] = Field(min_length=1)


class ChoirRequest(BaseModel):
    spec: ChoirSpecModel
    melody_id: str


class ErrorBody(BaseModel):
    code: str
    message: str
    request_id: str


class _BoundedPool:
    """Submit-or-reject executor: at most `queue_depth` unfinished jobs."""

    def __init__(self, workers: int, queue_depth: int):
        self._executor = ThreadPoolExecutor(max_workers=workers)
        self._lock = threading.Lock()
        self._pending = 0
        self.queue_depth = queue_depth

    def submit(self, fn, *args):
        with self._lock:
            if self._pending >= self.queue_depth:
                return None
            self._pending += 1
        future = self._executor.submit(fn, *args)
        future.add_done_callback(self._release)
        return future

    def _release(self, _future):
        with self._lock:
            self._pending -= 1


def _error_response(status: int, code: str, message: str,
                    request_id: str) -> JSONResponse:
    body = ErrorBody(code=code, message=message, request_id=request_id)
    return JSONResponse(status_code=status, content=body.model_dump())


def create_app(registry, config: ServiceConfig | None = None,
               console_dist=None) -> FastAPI:
    """Build the service over a loaded (or loadable) model registry."""
    if not isinstance(registry, ModelRegistry):
        registry = ModelRegistry.load(registry)
    config = config or ServiceConfig()
    pool = _BoundedPool(config.workers, config.queue_depth)
    app = FastAPI(title="singkit service")
    app.state.registry = registry
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error_response(422, "validation-error", str(exc.errors()[:3]),
                               uuid.uuid4().hex)

    def _run_audio_job(fn, request_id: str) -> Response:
        future = pool.submit(fn)
        if future is None:
            return _error_response(429, "queue-full",
                                   "synthesis queue is full; retry later",
                                   request_id)
        try:
            wave = future.result(timeout=config.timeout_s)
        except FutureTimeout:
            return _error_response(504, "timeout",
                                   f"synthesis exceeded {config.timeout_s}s",
                                   request_id)
        except CLIENT_ERRORS as exc:
            return _error_response(400, type(exc).__name__, str(exc), request_id)
        except SingkitError as exc:
            return _error_response(500, type(exc).__name__, str(exc), request_id)
        return Response(content=wav_bytes(wave), media_type="audio/wav",
                        headers={"X-Request-Id": request_id})

    @app.get("/v1/health")
    def health():
        return {"status": "ok",
                "prototypes": len(registry.prototypes),
                "melodies": len(registry.melody_index),
                "vocoder": registry.generator is not None}

    @app.get("/v1/prototypes", response_model=list[PrototypeInfo])
    def prototypes():
        return registry.prototype_list()

    @app.get("/v1/melodies", response_model=list[MelodyInfo])
    def melodies():
        return registry.melody_list()

    @app.post("/v1/synthesize")
    def synthesize_endpoint(request: SynthesizeRequest):
        request_id = uuid.uuid4().hex
        return _run_audio_job(
            lambda: registry.synthesize_with_weights(request.weights,
                                                     request.melody_id),
            request_id)

    @app.post("/v1/choir")
    def choir_endpoint(request: ChoirRequest):
        request_id = uuid.uuid4().hex
        payload = request.spec.model_dump()
        return _run_audio_job(
            lambda: registry.render_choir_payload(payload, request.melody_id),
            request_id)

    if console_dist and Path(console_dist).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(console_dist), html=True),
                  name="console")

    return app


def serve(registry_dir, host: str = "127.0.0.1", port: int = 8000,
          config: ServiceConfig | None = None, console_dist=None) -> None:
    """Blocking entry point used by the CLI `serve` subcommand."""
    import uvicorn

    app = create_app(registry_dir, config, console_dist)
    uvicorn.run(app, host=host, port=port, log_level="info")
