from __future__ import annotations

import base64
import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from tripss_sidecar.app import create_app
from tripss_sidecar.backends import HashBackend


def _png_b64(seed: int = 0, size=(16, 12)) -> str:
    rng = np.random.default_rng(seed)
    img = Image.fromarray(rng.integers(0, 255, (size[1], size[0], 3), dtype=np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(HashBackend()))


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert len(body["providers"]) == 3


def test_embed_image_dimension(client):
    resp = client.post("/embed/image", json={"image": _png_b64()})
    assert resp.status_code == 200
    body = resp.json()
    assert body["dim"] == 2048
    assert len(body["vector"]) == 2048
    assert all(np.isfinite(body["vector"]))
    assert body["provider_id"]


def test_embed_text_dimension(client):
    resp = client.post("/embed/text", json={"text": "hello"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["dim"] == 768
    assert len(body["vector"]) == 768


def test_repeated_requests_byte_identical(client):
    payload = {"image": _png_b64(3)}
    r1 = client.post("/embed/image", json=payload)
    r2 = client.post("/embed/image", json=payload)
    assert r1.content == r2.content
    t1 = client.post("/embed/text", json={"text": "hello"})
    t2 = client.post("/embed/text", json={"text": "hello"})
    assert t1.content == t2.content
    c1 = client.post("/caption", json={"image": _png_b64(4)})
    c2 = client.post("/caption", json={"image": _png_b64(4)})
    assert c1.content == c2.content


def test_caption_contract(client):
    resp = client.post(
        "/caption",
        json={"image": _png_b64(5), "prompt": "Describe.", "deterministic": True},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["caption"].strip()
    assert body["provider_id"]


def test_distinct_inputs_distinct_vectors(client):
    v1 = client.post("/embed/image", json={"image": _png_b64(1)}).json()["vector"]
    v2 = client.post("/embed/image", json={"image": _png_b64(2)}).json()["vector"]
    assert v1 != v2


def test_malformed_base64_is_400(client):
    resp = client.post("/embed/image", json={"image": "!!not-base64!!"})
    assert resp.status_code == 400


def test_non_png_payload_is_400(client):
    blob = base64.b64encode(b"definitely not a png").decode("ascii")
    resp = client.post("/embed/image", json={"image": blob})
    assert resp.status_code == 400


def test_malformed_json_is_400(client):
    resp = client.post(
        "/embed/text", content=b"{broken", headers={"Content-Type": "application/json"}
    )
    assert resp.status_code == 400
    resp = client.post("/embed/text", json={"wrong_key": 1})
    assert resp.status_code == 400


def test_503_while_loading():
    class SlowBackend(HashBackend):
        def load(self):
            time.sleep(0.4)

    client = TestClient(create_app(SlowBackend(), load_async=True))
    resp = client.get("/health")
    assert resp.status_code == 503
    assert resp.json()["status"] == "loading"
    resp = client.post("/embed/text", json={"text": "x"})
    assert resp.status_code == 503
    deadline = time.time() + 5
    while time.time() < deadline:
        if client.get("/health").status_code == 200:
            break
        time.sleep(0.05)
    assert client.get("/health").status_code == 200


def test_inference_failure_is_500():
    class BrokenBackend(HashBackend):
        def text_vector(self, text):
            from tripss_sidecar.backends import BackendError

            raise BackendError("model exploded")

    client = TestClient(create_app(BrokenBackend()), raise_server_exceptions=False)
    resp = client.post("/embed/text", json={"text": "x"})
    assert resp.status_code == 500
    assert "model exploded" in resp.json()["error"]


def test_empty_caption_replaced():
    class EmptyCaptioner(HashBackend):
        def caption(self, png_bytes, prompt, deterministic):
            return "   "

    client = TestClient(create_app(EmptyCaptioner()))
    resp = client.post("/caption", json={"image": _png_b64(6)})
    assert resp.status_code == 200
    assert resp.json()["caption"] == "No visible content"
