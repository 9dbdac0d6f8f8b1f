"""Thin HTTP inference service: one checkpoint loaded at startup, a health
probe, and a sketch-to-mesh endpoint consumed by the sketchpad UI.
"""

from __future__ import annotations

import base64
import binascii
import io
from contextlib import asynccontextmanager
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .geometry import obj_to_string
from .networks import file_digest
from .pipeline import NetBundle, infer, load_train_checkpoint
from .rasterizer import hard_rasterize

MIN_FOREGROUND_PIXELS = 10


class _ModelHolder:
    def __init__(self, checkpoint_path: str):
        self.checkpoint_path = checkpoint_path
        self.nets: Optional[NetBundle] = None
        self.digest: Optional[str] = None

    def load(self) -> None:
        self.nets, _ = load_train_checkpoint(self.checkpoint_path)
        self.digest = file_digest(self.checkpoint_path)

    @property
    def ready(self) -> bool:
        return self.nets is not None


def _decode_sketch(data: bytes, threshold: float = 0.5) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise ValueError(f"undecodable image: {e}") from e
    arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return (arr >= threshold).astype(np.float64)


def _fill_silhouette(sketch: np.ndarray) -> np.ndarray:
    from scipy.ndimage import binary_fill_holes

    return binary_fill_holes(sketch > 0.5).astype(np.float64)


def create_app(checkpoint_path: str) -> FastAPI:
    holder = _ModelHolder(checkpoint_path)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        holder.load()
        yield

    app = FastAPI(title="sketchmesh inference", lifespan=lifespan)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.holder = holder

    @app.get("/health")
    async def health():
        if not holder.ready:
            return JSONResponse({"status": "loading"}, status_code=503)
        return {"status": "ready",
                "checkpoint_digest": holder.digest,
                "model_resolution": holder.nets.config.resolution}

    @app.post("/infer")
    async def infer_endpoint(request: Request):
        if not holder.ready:
            return JSONResponse({"detail": "model not loaded"}, status_code=503)
        nets = holder.nets
        resolution = nets.config.resolution

        content_type = request.headers.get("content-type", "")
        declared_res: Optional[int] = None
        if content_type.startswith("image/png"):
            raw = await request.body()
        else:
            try:
                payload = await request.json()
            except Exception:
                return JSONResponse({"detail": "body is neither PNG nor JSON"},
                                    status_code=400)
            b64 = payload.get("sketch_png_base64")
            if not b64:
                return JSONResponse({"detail": "missing sketch_png_base64"},
                                    status_code=400)
            declared_res = payload.get("resolution")
            try:
                raw = base64.b64decode(b64, validate=True)
            except (binascii.Error, ValueError):
                return JSONResponse({"detail": "invalid base64 payload"},
                                    status_code=400)

        try:
            sketch = _decode_sketch(raw)
        except ValueError as e:
            return JSONResponse({"detail": str(e)}, status_code=400)

        if declared_res is not None and declared_res != resolution:
            return JSONResponse({"detail": "wrong resolution",
                                 "expected_resolution": resolution},
                                status_code=422)
        if sketch.shape != (resolution, resolution):
            return JSONResponse({"detail": "wrong resolution",
                                 "expected_resolution": resolution},
                                status_code=422)
        if sketch.sum() < MIN_FOREGROUND_PIXELS:
            return JSONResponse({"detail": "empty sketch"}, status_code=422)

        try:
            mesh, pose = infer(sketch, nets)
            rendered = hard_rasterize(mesh, pose, resolution,
                                      fov_deg=nets.config.fov_deg)
            fill = _fill_silhouette(sketch)
            union = np.logical_or(fill > 0.5, rendered.data > 0.5).sum()
            inter = np.logical_and(fill > 0.5, rendered.data > 0.5).sum()
            iou = float(inter) / float(union) if union else 1.0
        except (ArithmeticError, ValueError) as e:
            return JSONResponse({"detail": f"inference failed: {e}"},
                                status_code=500)

        return {"mesh_obj": obj_to_string(mesh),
                "pose": {"elevation_deg": pose.elevation_deg,
                         "azimuth_deg": pose.azimuth_deg,
                         "distance": pose.distance},
                "iou_preview": iou}

    return app
