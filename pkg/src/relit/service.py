"""Read-only HTTP service rendering the fitted model on demand.

The model is an immutable snapshot; renders run synchronously on a bounded
worker pool with a FIFO overflow queue (429 once the queue is full).
Identical requests produce identical PNG bytes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel, Field, ValidationError

from . import render
from .dataio import ManifestError, camera_from_json
from .network import load_net
from .scene import SceneModel


@dataclass
class ServiceSettings:
    workers: int = 0  # 0 -> hardware parallelism
    queue_max: int = 32
    max_canvas: int = 1024
    matte_with_mask: bool = True

    def __post_init__(self):
        if self.workers <= 0:
            import os

            self.workers = os.cpu_count() or 1


class CameraBody(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float
    r: list[float] = Field(min_length=9, max_length=9)
    t: list[float] = Field(min_length=3, max_length=3)
    w: int = Field(ge=1)
    h: int = Field(ge=1)


class OriginalBody(BaseModel):
    mode: Literal["original"]
    flash: bool = False


class DirectionalBody(BaseModel):
    mode: Literal["directional"]
    direction: list[float] = Field(min_length=3, max_length=3)
    ambient: float = Field(default=0.5, ge=0.0, le=1.0)
    color: list[float] = Field(default=[1.0, 1.0, 1.0], min_length=3, max_length=3)


class PointBody(BaseModel):
    mode: Literal["point"]
    direction: list[float] = Field(min_length=3, max_length=3)
    distance: float = Field(gt=0.0)
    color: list[float] = Field(default=[1.0, 1.0, 1.0], min_length=3, max_length=3)


class SHBody(BaseModel):
    mode: Literal["sh"]
    coefficients: list[float] = Field(min_length=27, max_length=27)


LightingBody = Union[OriginalBody, DirectionalBody, PointBody, SHBody]


class RenderBody(BaseModel):
    camera: CameraBody
    lighting: LightingBody = Field(discriminator="mode")
    width: Optional[int] = Field(default=None, ge=1)
    height: Optional[int] = Field(default=None, ge=1)
    output: Literal["png"] = "png"


class _RenderGate:
    """Counting gate: at most ``workers`` active renders, ``queue_max`` waiting."""

    def __init__(self, workers: int, queue_max: int):
        self._sem = threading.Semaphore(workers)
        self._lock = threading.Lock()
        self._waiting = 0
        self._queue_max = queue_max

    def try_enter(self) -> bool:
        if self._sem.acquire(blocking=False):
            return True
        with self._lock:
            if self._waiting >= self._queue_max:
                return False
            self._waiting += 1
        self._sem.acquire()
        with self._lock:
            self._waiting -= 1
        return True

    def leave(self) -> None:
        self._sem.release()


def create_app(model: Optional[SceneModel] = None, settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings()
    app = FastAPI(title="relit frame service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.model = model
    app.state.net = None
    app.state.settings = settings
    app.state.gate = _RenderGate(settings.workers, settings.queue_max)
    if model is not None:
        _install_model(app, model)

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err.get("loc", []) if p not in ("body",))
            msgs.append(f"{loc}: {err.get('msg', 'invalid')}")
        return JSONResponse(status_code=400, content={"detail": "; ".join(msgs)})

    @app.get("/healthz")
    def healthz():
        if app.state.model is None:
            return PlainTextResponse("model not loaded", status_code=503)
        return PlainTextResponse("ok")

    @app.get("/model/info")
    def model_info():
        m = app.state.model
        if m is None:
            return JSONResponse(status_code=503, content={"detail": "model not loaded"})
        return {
            "points": m.cloud.count,
            "descriptor_dim": m.descriptors.width,
            "trained_steps": m.trained_steps,
            "lighting_modes": list(render.LIGHTING_MODES),
        }

    @app.post("/render")
    def render_endpoint(body: RenderBody):
        m = app.state.model
        if m is None:
            return JSONResponse(status_code=503, content={"detail": "model not loaded"})
        limit = app.state.settings.max_canvas
        cam_dict = body.camera.model_dump()
        if body.width is not None:
            cam_dict["w"] = body.width
        if body.height is not None:
            cam_dict["h"] = body.height
        if cam_dict["w"] > limit or cam_dict["h"] > limit:
            return JSONResponse(
                status_code=400,
                content={"detail": f"width/height exceed the canvas limit of {limit}"},
            )
        try:
            camera = camera_from_json(cam_dict)
            spec = render.parse_lighting(body.lighting.model_dump())
        except (ManifestError, ValueError) as e:
            return JSONResponse(status_code=400, content={"detail": str(e)})

        if not app.state.gate.try_enter():
            return JSONResponse(status_code=429, content={"detail": "render queue is full"})
        try:
            png = render.render_png(
                m, camera, spec, app.state.settings.matte_with_mask, app.state.net
            )
        finally:
            app.state.gate.leave()
        return Response(content=png, media_type="image/png")

    return app


def _install_model(app: FastAPI, model: SceneModel) -> None:
    # load fully, then swap the snapshot; requests only ever see a whole model
    net = load_net(model.net_params, model.net_config)
    app.state.net = net
    app.state.model = model


def load_and_serve(model_path, host: str = "127.0.0.1", port: int = 8000, settings=None):
    import uvicorn

    from .container import load_scene

    model, _ = load_scene(model_path)
    app = create_app(model, settings)
    uvicorn.run(app, host=host, port=port, log_level="warning")
