from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tripss.providers import (
    FALLBACK_CAPTION,
    CachedProvider,
    CacheOnlyProvider,
    Caption,
    DimensionMismatchError,
    EmbeddingCache,
    ProviderError,
    RemoteProvider,
    StubProvider,
    caption_frame,
    sanitize_caption,
    semantic_embedding,
    structural_embedding,
    stub_embed,
)

from conftest import solid_frame

REFUSAL_KEYWORDS = ("i cannot", "i'm sorry", "unable to", "no image", "cannot assist")


class _CountingStub(StubProvider):
    def __init__(self):
        super().__init__()
        self.structural_calls = 0
        self.caption_calls = 0
        self.semantic_calls = 0

    def structural(self, frame):
        self.structural_calls += 1
        return super().structural(frame)

    def caption_text(self, frame):
        self.caption_calls += 1
        return super().caption_text(frame)

    def semantic(self, text):
        self.semantic_calls += 1
        return super().semantic(text)


class _FailingProvider:
    provider_id = "failing"

    def structural(self, frame):
        raise ProviderError("down")

    def caption_text(self, frame):
        raise ProviderError("down")

    def semantic(self, text):
        raise ProviderError("down")


class _BadDimProvider(StubProvider):
    def structural(self, frame):
        return stub_embed(frame.pixels.tobytes(), 1000)


class _NonFiniteProvider(StubProvider):
    def semantic(self, text):
        vec = super().semantic(text).copy()
        vec[0] = np.nan
        return vec


def test_stub_embed_deterministic():
    v1 = stub_embed(b"payload", 2048)
    v2 = stub_embed(b"payload", 2048)
    assert np.array_equal(v1, v2)
    assert v1.shape == (2048,)


def test_stub_embed_unit_norm():
    for dim in (3, 768, 2048):
        assert abs(np.linalg.norm(stub_embed(b"x", dim)) - 1.0) < 1e-9


def test_stub_embed_distinct_inputs():
    corpus = [f"frame-{i}".encode() for i in range(32)]
    vectors = [stub_embed(data, 64) for data in corpus]
    for i in range(len(corpus)):
        for j in range(i + 1, len(corpus)):
            assert np.any(vectors[i] != vectors[j])


def test_stub_embed_rejects_bad_dim():
    with pytest.raises(ValueError):
        stub_embed(b"x", 0)


def test_structural_dimension_contract():
    frame = solid_frame((4, 8, 15), 8, 8)
    emb = structural_embedding(frame, StubProvider())
    assert emb.vector.shape == (2048,)
    emb2 = structural_embedding(frame, StubProvider())
    assert np.array_equal(emb.vector, emb2.vector)


def test_structural_dimension_mismatch_is_hard_error():
    with pytest.raises(DimensionMismatchError, match=r"1000≠2048"):
        structural_embedding(solid_frame((1, 2, 3), 8, 8), _BadDimProvider())


def test_semantic_dimension_and_determinism():
    cap = Caption.from_raw("No visible content")
    assert cap.is_fallback
    v1 = semantic_embedding(cap, StubProvider()).vector
    v2 = semantic_embedding(Caption.from_raw(""), StubProvider()).vector
    assert v1.shape == (768,)
    assert np.array_equal(v1, v2)  # both captions sanitize to the same text


def test_semantic_non_finite_rejected():
    with pytest.raises(ProviderError, match="non-finite"):
        semantic_embedding(Caption.from_raw("fine"), _NonFiniteProvider())


def test_sanitize_empty_and_whitespace():
    assert sanitize_caption("") == FALLBACK_CAPTION
    assert sanitize_caption("   \n") == FALLBACK_CAPTION


def test_sanitize_refusals():
    assert sanitize_caption("I'm sorry, I can't help") == FALLBACK_CAPTION
    assert sanitize_caption("I cannot see the image") == FALLBACK_CAPTION
    assert sanitize_caption("There is no image provided") == FALLBACK_CAPTION


def test_sanitize_passthrough():
    assert sanitize_caption("Two people play chess.") == "Two people play chess."
    assert sanitize_caption("  A red car on a road. ") == "A red car on a road."


@given(st.text(max_size=80), st.sampled_from(REFUSAL_KEYWORDS))
def test_sanitize_catches_any_keyword_occurrence(prefix, keyword):
    assert sanitize_caption(prefix + keyword + " etc") == FALLBACK_CAPTION


@given(st.text(max_size=120))
def test_sanitize_total_and_nonempty(raw):
    out = sanitize_caption(raw)
    assert out
    is_fallback = out == FALLBACK_CAPTION
    lowered = raw.strip().lower()
    expected = (not lowered) or any(k in lowered for k in REFUSAL_KEYWORDS)
    assert is_fallback == expected


def test_caption_frame_stub_deterministic():
    frame = solid_frame((9, 9, 9), 8, 8)
    c1 = caption_frame(frame, StubProvider())
    c2 = caption_frame(frame, StubProvider())
    assert c1.sanitized == c2.sanitized
    assert not c1.is_fallback


def test_caption_frame_degrades_to_fallback(caplog):
    frame = solid_frame((9, 9, 9), 8, 8)
    cap = caption_frame(frame, _FailingProvider())
    assert cap.sanitized == FALLBACK_CAPTION
    assert cap.is_fallback
    assert any("fallback" in r.message for r in caplog.records)


def test_cache_round_trip_bit_identical(tmp_path):
    cache = EmbeddingCache(tmp_path)
    frame = solid_frame((200, 100, 50), 8, 8, video_id="vid")
    inner = _CountingStub()
    provider = CachedProvider(inner, cache)

    first = structural_embedding(frame, provider).vector
    second = structural_embedding(frame, provider).vector
    assert inner.structural_calls == 1
    assert np.array_equal(first, second)
    assert first.dtype == np.float32

    cap1 = caption_frame(frame, provider)
    cap2 = caption_frame(frame, provider)
    assert inner.caption_calls == 1
    assert cap1 == cap2

    sem1 = semantic_embedding(cap1, provider).vector
    sem2 = semantic_embedding(cap2, provider).vector
    assert inner.semantic_calls == 1
    assert np.array_equal(sem1, sem2)


def test_cache_only_mode_errors_on_miss(tmp_path):
    provider = CacheOnlyProvider(EmbeddingCache(tmp_path), "stub")
    with pytest.raises(ProviderError, match="cache miss"):
        structural_embedding(solid_frame((1, 1, 1), 8, 8), provider)


class _SidecarHandler(BaseHTTPRequestHandler):
    fail_first = 0
    failures = {"count": 0}

    def log_message(self, *args):
        pass

    def do_POST(self):
        if self.failures["count"] < self.fail_first:
            self.failures["count"] += 1
            self.send_response(503)
            self.end_headers()
            return
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if self.path == "/embed/image":
            payload = {"vector": [0.5] * 2048, "dim": 2048, "provider_id": "mock"}
        elif self.path == "/embed/text":
            payload = {"vector": [0.25] * 768, "dim": 768, "provider_id": "mock"}
        elif self.path == "/caption":
            assert "prompt" in body and body["deterministic"] is True
            payload = {"caption": "A mock scene.", "provider_id": "mock"}
        else:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture()
def mock_sidecar():
    _SidecarHandler.fail_first = 0
    _SidecarHandler.failures = {"count": 0}
    server = ThreadingHTTPServer(("127.0.0.1", 0), _SidecarHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_remote_provider_happy_path(mock_sidecar):
    provider = RemoteProvider(mock_sidecar, retries=2, backoff=0.01)
    frame = solid_frame((7, 7, 7), 8, 8)
    assert structural_embedding(frame, provider).vector.shape == (2048,)
    cap = caption_frame(frame, provider)
    assert cap.sanitized == "A mock scene."
    assert semantic_embedding(cap, provider).vector.shape == (768,)


def test_remote_provider_retries_on_503(mock_sidecar):
    _SidecarHandler.fail_first = 2
    provider = RemoteProvider(mock_sidecar, retries=3, backoff=0.01)
    frame = solid_frame((7, 7, 7), 8, 8)
    assert structural_embedding(frame, provider).vector.shape == (2048,)


def test_remote_provider_unreachable():
    provider = RemoteProvider("http://127.0.0.1:1", retries=2, backoff=0.01, timeout=0.5)
    with pytest.raises(ProviderError, match="unreachable"):
        structural_embedding(solid_frame((7, 7, 7), 8, 8), provider)


def test_provider_url_env_override(monkeypatch):
    from tripss.providers import resolve_provider_url

    assert resolve_provider_url("http://configured") == "http://configured"
    monkeypatch.setenv("TRIPSS_PROVIDER_URL", "http://overridden")
    assert resolve_provider_url("http://configured") == "http://overridden"
