"""HTTP service speaking the provider wire protocol.

Endpoints: GET /health, POST /embed/image, POST /embed/text, POST /caption.
Responses are deterministic for identical requests. Errors: 400 for malformed
JSON or base64, 503 while models load, 500 on inference failure.
"""

from __future__ import annotations

import base64
import binascii
import logging
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import IMAGE_DIM, PNG_MAGIC, TEXT_DIM, BackendError, HashBackend

logger = logging.getLogger(__name__)

DEFAULT_PROMPT = "In one sentence, describe the visible content of this provided image."


class ImageRequest(BaseModel):
    image: str  # base64 PNG


class TextRequest(BaseModel):
    text: str


class CaptionRequest(BaseModel):
    image: str
    prompt: str = DEFAULT_PROMPT
    deterministic: bool = True


def _decode_png(b64: str) -> bytes | JSONResponse:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        return JSONResponse(status_code=400, content={"error": "malformed base64 image"})
    if not raw.startswith(PNG_MAGIC):
        return JSONResponse(status_code=400, content={"error": "payload is not a PNG image"})
    return raw


def _vector_payload(vector: np.ndarray, dim: int, provider_id: str) -> dict:
    vec = np.asarray(vector, dtype=np.float32).reshape(-1)
    if vec.shape[0] != dim or not np.all(np.isfinite(vec)):
        raise BackendError(f"backend produced an invalid {dim}-d vector")
    return {"vector": [float(x) for x in vec], "dim": dim, "provider_id": provider_id}


def create_app(backend=None, load_async: bool = False) -> FastAPI:
    """App factory. ``load_async`` loads the backend in a thread so the
    service starts answering (503) immediately while weights come up."""
    backend = backend if backend is not None else HashBackend()
    app = FastAPI(title="tripss-sidecar")
    state = {"ready": False, "error": None}

    def _load():
        try:
            backend.load()
            state["ready"] = True
        except Exception as exc:  # surfaced via /health and 503s
            state["error"] = str(exc)
            logger.exception("backend failed to load")

    if load_async:
        threading.Thread(target=_load, daemon=True).start()
    else:
        _load()

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body"})

    @app.exception_handler(BackendError)
    async def _inference_error(request: Request, exc: BackendError):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    def _not_ready() -> JSONResponse | None:
        if state["ready"]:
            return None
        detail = {"status": "loading"}
        if state["error"]:
            detail = {"status": "error", "error": state["error"]}
        return JSONResponse(status_code=503, content=detail)

    @app.get("/health")
    def health():
        if not state["ready"]:
            return _not_ready()
        return {
            "status": "ok",
            "providers": [
                backend.image_provider_id,
                backend.text_provider_id,
                backend.caption_provider_id,
            ],
        }

    @app.post("/embed/image")
    def embed_image(req: ImageRequest):
        if (resp := _not_ready()) is not None:
            return resp
        png = _decode_png(req.image)
        if isinstance(png, JSONResponse):
            return png
        return _vector_payload(backend.image_vector(png), IMAGE_DIM, backend.image_provider_id)

    @app.post("/embed/text")
    def embed_text(req: TextRequest):
        if (resp := _not_ready()) is not None:
            return resp
        return _vector_payload(backend.text_vector(req.text), TEXT_DIM, backend.text_provider_id)

    @app.post("/caption")
    def caption(req: CaptionRequest):
        if (resp := _not_ready()) is not None:
            return resp
        png = _decode_png(req.image)
        if isinstance(png, JSONResponse):
            return png
        text = backend.caption(png, req.prompt, req.deterministic)
        if not text.strip():
            # the wire contract forbids empty captions; refusals pass through
            # raw so the client-side sanitizer owns the fallback policy
            text = "No visible content"
        return {"caption": text, "provider_id": backend.caption_provider_id}

    return app
