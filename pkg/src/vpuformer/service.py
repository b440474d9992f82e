"""HTTP session API for interactive segmentation.

Sessions live in process memory; requests to one session are serialized by
a per-session lock while distinct sessions run in parallel against the
shared read-only checkpoint.
"""
from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .harness import make_predictor
from .interact import ProtocolConfig, compute_iou, should_switch
from .model import ModelConfig, Tensor
from .pue import Prompt, PromptKind, ValidationError

SERVICE_VERSION = "1"


class PromptBody(BaseModel):
    kind: str
    positive: bool
    geometry: dict
    request_id: str | None = None


class CreateSessionBody(BaseModel):
    image_png_b64: str
    gt_png_b64: str | None = None


@dataclass
class Session:
    id: str
    image: "np.ndarray"
    gt: np.ndarray | None
    transform: dict
    created_at: float
    prompts: list[Prompt] = field(default_factory=list)
    iou_trace: list[float] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    prev_prob: np.ndarray | None = None
    request_ids: set[str] = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _decode_png(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception:
        raise HTTPException(status_code=400,
                            detail={"code": "undecodable_image"})
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def _letterbox(arr: np.ndarray, size: int) -> tuple[np.ndarray, dict]:
    h, w = arr.shape[:2]
    scale = size / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    img = Image.fromarray(np.round(arr * 255).astype(np.uint8))
    img = img.resize((nw, nh), Image.BILINEAR)
    canvas = np.full((size, size, 3), 0.5)
    oy, ox = (size - nh) // 2, (size - nw) // 2
    canvas[oy:oy + nh, ox:ox + nw] = np.asarray(img, dtype=np.float64) / 255.0
    return canvas, {"scale": scale, "offset_x": ox, "offset_y": oy,
                    "input_size": size}


def _mask_to_b64(mask: np.ndarray) -> str:
    img = Image.fromarray((mask.astype(np.uint8)) * 255)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _prob_to_b64(prob: np.ndarray) -> str:
    img = Image.fromarray(np.round(prob * 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _parse_prompt(body: PromptBody, size: int) -> Prompt:
    def check(x, y):
        if not (0 <= x < size and 0 <= y < size):
            raise HTTPException(status_code=422,
                                detail={"code": "out_of_bounds"})

    try:
        geo = body.geometry
        if body.kind == "click":
            c = geo["click"]
            check(c["x"], c["y"])
            return Prompt.make_click(c["x"], c["y"], body.positive)
        if body.kind == "box":
            b = geo["box"]
            check(b["cx"], b["cy"])
            return Prompt.make_box(b["cx"], b["cy"], b["w"], b["h"],
                                   body.positive)
        if body.kind == "scribble":
            pts = geo["scribble"]["points"]
            for x, y in pts:
                check(x, y)
            return Prompt.make_scribble(pts, body.positive)
    except HTTPException:
        raise
    except (KeyError, TypeError, ValueError, ValidationError):
        raise HTTPException(status_code=422, detail={"code": "bad_geometry"})
    raise HTTPException(status_code=422, detail={"code": "unknown_kind"})


def create_app(params: dict[str, Tensor], mcfg: ModelConfig,
               static_dir: str | None = None, max_sessions: int = 64,
               sigma: float = 3.0) -> FastAPI:
    app = FastAPI(title="vpu-service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    predict = make_predictor(params, mcfg, sigma=sigma, base_seed=0)
    protocol = ProtocolConfig()

    from .pue import ImagePlane

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": SERVICE_VERSION}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        arr = _decode_png(body.image_png_b64)
        img, transform = _letterbox(arr, mcfg.input_size)
        gt = None
        if body.gt_png_b64:
            gt_arr = _decode_png(body.gt_png_b64)
            gt_img, _ = _letterbox(gt_arr, mcfg.input_size)
            gt = gt_img.mean(axis=2) > 0.5
        with registry_lock:
            if len(sessions) >= max_sessions:
                return JSONResponse(status_code=429,
                                    content={"code": "capacity_exceeded"})
            sid = uuid.uuid4().hex
            sessions[sid] = Session(id=sid, image=img, gt=gt,
                                    transform=transform,
                                    created_at=time.time())
        return {"session_id": sid, "transform": transform}

    def _get(sid: str) -> Session:
        with registry_lock:
            sess = sessions.get(sid)
        if sess is None:
            raise HTTPException(status_code=404,
                                detail={"code": "unknown_session"})
        return sess

    @app.post("/v1/sessions/{sid}/prompts")
    def apply_prompt(sid: str, body: PromptBody):
        sess = _get(sid)
        prompt = _parse_prompt(body, mcfg.input_size)
        with sess.lock:
            if body.request_id:
                if body.request_id in sess.request_ids:
                    raise HTTPException(status_code=409,
                                        detail={"code": "duplicate_request"})
                sess.request_ids.add(body.request_id)
            sess.prompts.append(prompt)
            if len(sess.prompts) > mcfg.max_prompts:
                # evict oldest non-click first, then oldest
                drop = next((i for i, p in enumerate(sess.prompts)
                             if p.kind is not PromptKind.CLICK), 0)
                sess.prompts.pop(drop)
            prev = (sess.prev_prob if sess.prev_prob is not None
                    else np.zeros((mcfg.input_size, mcfg.input_size)))
            prob = predict(ImagePlane(sess.image), prev, list(sess.prompts))
            sess.prev_prob = prob
            mask = prob >= 0.5
            step_index = len(sess.steps) + 1
            result = {
                "step_index": step_index,
                "mask_png_b64": _mask_to_b64(mask),
                "prob_png_b64": _prob_to_b64(prob),
                "prob_stats": {
                    "mean": float(prob.mean()),
                    "min": float(prob.min()),
                    "max": float(prob.max()),
                    "foreground_fraction": float(mask.mean()),
                },
            }
            if sess.gt is not None:
                iou = compute_iou(mask, sess.gt)
                sess.iou_trace.append(iou)
                result["iou"] = iou
                result["switch_suggested"] = should_switch(sess.iou_trace,
                                                           protocol)
            else:
                result["switch_suggested"] = False
            sess.steps.append({
                "kind": prompt.kind.value,
                "positive": prompt.positive,
                "geometry": body.geometry,
                "iou": result.get("iou"),
            })
            return result

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str):
        sess = _get(sid)
        with sess.lock:
            return {
                "session_id": sess.id,
                "created_at": sess.created_at,
                "transform": sess.transform,
                "has_gt": sess.gt is not None,
                "steps": list(sess.steps),
                "iou_trace": list(sess.iou_trace),
            }

    @app.delete("/v1/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        with registry_lock:
            if sid not in sessions:
                raise HTTPException(status_code=404,
                                    detail={"code": "unknown_session"})
            del sessions[sid]

    if static_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app
