"""Structural (2048-d) and semantic (768-d) embedding providers.

Providers are black boxes behind a small contract: a remote sidecar speaking
JSON over HTTP, a deterministic offline stub, and a caching wrapper. Vectors
are normalized to float32 at this boundary so cache hits are bit-identical to
first-call results.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .ingest import SampledFrame

logger = logging.getLogger(__name__)

STRUCTURAL_DIM = 2048
SEMANTIC_DIM = 768

CAPTION_PROMPT = "In one sentence, describe the visible content of this provided image."
FALLBACK_CAPTION = "No visible content"

DEFAULT_REFUSAL_KEYWORDS = (
    "i cannot",
    "i'm sorry",
    "unable to",
    "no image",
    "cannot assist",
)

PROVIDER_URL_ENV = "TRIPSS_PROVIDER_URL"


class ProviderError(RuntimeError):
    """Provider unreachable or returned an unusable response."""


class DimensionMismatchError(ProviderError):
    """Provider returned a vector of the wrong length."""


@dataclass(frozen=True)
class StructuralEmbedding:
    vector: np.ndarray  # 2048, float32
    provider_id: str


@dataclass(frozen=True)
class SemanticEmbedding:
    vector: np.ndarray  # 768, float32
    provider_id: str


@dataclass(frozen=True)
class Caption:
    raw: str
    sanitized: str
    is_fallback: bool

    @classmethod
    def from_raw(cls, raw: str, keywords: tuple[str, ...] = DEFAULT_REFUSAL_KEYWORDS) -> "Caption":
        sanitized = sanitize_caption(raw, keywords)
        return cls(raw=raw, sanitized=sanitized, is_fallback=sanitized == FALLBACK_CAPTION)


def sanitize_caption(raw: str, keywords: tuple[str, ...] = DEFAULT_REFUSAL_KEYWORDS) -> str:
    """Replace refusal-style or empty captions with the uniform fallback text."""
    trimmed = raw.strip()
    if not trimmed:
        return FALLBACK_CAPTION
    lowered = trimmed.lower()
    if any(kw in lowered for kw in keywords):
        return FALLBACK_CAPTION
    return trimmed


def stub_embed(data: bytes, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector derived from a hash of ``data``.

    Uses a keyed blake2b counter stream, so results are stable across
    platforms, processes and library versions.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    key = hashlib.blake2b(data, digest_size=16).digest()
    words: list[np.ndarray] = []
    needed = dim
    counter = 0
    while needed > 0:
        block = hashlib.blake2b(counter.to_bytes(8, "little"), key=key, digest_size=64).digest()
        words.append(np.frombuffer(block, dtype="<u8"))
        needed -= 8
        counter += 1
    u = np.concatenate(words)[:dim].astype(np.float64) / 2.0**64
    v = 2.0 * u - 1.0
    norm = np.linalg.norm(v)
    if norm == 0:  # unreachable in practice; keeps the unit-norm contract total
        v[0] = 1.0
        norm = 1.0
    return v / norm


class StubProvider:
    """Offline deterministic provider for tests and --stub-providers runs."""

    def __init__(self, provider_id: str = "stub"):
        self.provider_id = provider_id

    def structural(self, frame: SampledFrame) -> np.ndarray:
        return stub_embed(frame.pixels.tobytes(), STRUCTURAL_DIM)

    def caption_text(self, frame: SampledFrame) -> str:
        digest = hashlib.blake2b(frame.pixels.tobytes(), digest_size=6).hexdigest()
        return f"A synthetic scene with signature {digest}."

    def semantic(self, text: str) -> np.ndarray:
        return stub_embed(text.encode("utf-8"), SEMANTIC_DIM)


class RemoteProvider:
    """HTTP client for the embedding/caption sidecar.

    Endpoints: POST /embed/image, POST /embed/text, POST /caption. Retries
    with exponential backoff (3 attempts starting at 500 ms).
    """

    def __init__(
        self,
        url: str,
        provider_id: str = "remote",
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
    ):
        self.url = url.rstrip("/")
        self.provider_id = provider_id
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout

    def _post(self, endpoint: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            if attempt > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = requests.post(f"{self.url}{endpoint}", json=payload, timeout=self.timeout)
                if resp.status_code >= 500 or resp.status_code == 503:
                    last_error = ProviderError(f"{endpoint} returned HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()
            except (requests.ConnectionError, requests.Timeout, ValueError) as exc:
                last_error = exc
        raise ProviderError(f"provider unreachable at {self.url}{endpoint}: {last_error}")

    def structural(self, frame: SampledFrame) -> np.ndarray:
        image = base64.b64encode(frame.png_bytes()).decode("ascii")
        body = self._post("/embed/image", {"image": image})
        return np.asarray(body["vector"], dtype=np.float64)

    def caption_text(self, frame: SampledFrame) -> str:
        image = base64.b64encode(frame.png_bytes()).decode("ascii")
        body = self._post("/caption", {"image": image, "prompt": CAPTION_PROMPT, "deterministic": True})
        return str(body["caption"])

    def semantic(self, text: str) -> np.ndarray:
        body = self._post("/embed/text", {"text": text})
        return np.asarray(body["vector"], dtype=np.float64)


def resolve_provider_url(configured: str) -> str:
    """Config endpoint, overridable by the TRIPSS_PROVIDER_URL env var."""
    return os.environ.get(PROVIDER_URL_ENV, configured)


class EmbeddingCache:
    """Disk cache keyed by (video_id, sample_index, provider_id, kind).

    Vectors live in one little-endian float32 binary file per kind per video
    plus a JSON row index; captions are cached as JSON lines. Reads are
    lock-free, writes are serialized.
    """

    def __init__(self, root_dir: str | Path):
        self.root = Path(root_dir)
        self._lock = threading.Lock()

    def _vec_paths(self, video_id: str, provider_id: str, kind: str) -> tuple[Path, Path]:
        d = self.root / video_id
        return d / f"{kind}.{provider_id}.bin", d / f"{kind}.{provider_id}.index.json"

    def _caption_path(self, video_id: str, provider_id: str) -> Path:
        return self.root / video_id / f"captions.{provider_id}.jsonl"

    @staticmethod
    def _atomic_write(path: Path, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)

    def get_vector(
        self, video_id: str, sample_index: int, provider_id: str, kind: str, dim: int
    ) -> np.ndarray | None:
        bin_path, idx_path = self._vec_paths(video_id, provider_id, kind)
        if not bin_path.exists() or not idx_path.exists():
            return None
        index = json.loads(idx_path.read_text(encoding="utf-8"))
        row = index.get(str(sample_index))
        if row is None:
            return None
        data = np.fromfile(bin_path, dtype="<f4")
        return data[row * dim : (row + 1) * dim].copy()

    def put_vector(
        self, video_id: str, sample_index: int, provider_id: str, kind: str, vector: np.ndarray
    ) -> None:
        bin_path, idx_path = self._vec_paths(video_id, provider_id, kind)
        with self._lock:
            bin_path.parent.mkdir(parents=True, exist_ok=True)
            index = json.loads(idx_path.read_text(encoding="utf-8")) if idx_path.exists() else {}
            if str(sample_index) in index:
                return
            # the row lands in the bin file before the index names it, so a
            # concurrent lock-free reader can never see a dangling row
            with open(bin_path, "ab") as fh:
                fh.write(np.asarray(vector, dtype="<f4").tobytes())
                fh.flush()
            index[str(sample_index)] = len(index)
            self._atomic_write(idx_path, json.dumps(index, sort_keys=True))

    def get_caption(self, video_id: str, sample_index: int, provider_id: str) -> str | None:
        path = self._caption_path(video_id, provider_id)
        if not path.exists():
            return None
        for line in path.read_text(encoding="utf-8").splitlines():
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                continue  # in-flight trailing line from a concurrent append
            if entry["sample_index"] == sample_index:
                return entry["raw"]
        return None

    def put_caption(self, video_id: str, sample_index: int, provider_id: str, raw: str) -> None:
        path = self._caption_path(video_id, provider_id)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            if self.get_caption(video_id, sample_index, provider_id) is not None:
                return
            entry = {
                "sample_index": sample_index,
                "raw": raw,
                "sanitized": sanitize_caption(raw),
            }
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


class CachedProvider:
    """Wraps a provider with the embedding cache; one inner call per key."""

    def __init__(self, inner, cache: EmbeddingCache):
        self.inner = inner
        self.cache = cache
        self.provider_id = inner.provider_id

    def structural(self, frame: SampledFrame) -> np.ndarray:
        hit = self.cache.get_vector(
            frame.video_id, frame.sample_index, self.provider_id, "structural", STRUCTURAL_DIM
        )
        if hit is not None:
            return hit
        vec = np.asarray(self.inner.structural(frame), dtype=np.float32)
        self.cache.put_vector(frame.video_id, frame.sample_index, self.provider_id, "structural", vec)
        return vec

    def caption_text(self, frame: SampledFrame) -> str:
        hit = self.cache.get_caption(frame.video_id, frame.sample_index, self.provider_id)
        if hit is not None:
            return hit
        raw = self.inner.caption_text(frame)
        self.cache.put_caption(frame.video_id, frame.sample_index, self.provider_id, raw)
        return raw

    def semantic(self, text: str) -> np.ndarray:
        # Semantic vectors are keyed by text hash, not sample index: identical
        # captions share one cache row.
        key = hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()
        hit = self.cache.get_vector("_text", 0, self.provider_id, f"semantic.{key}", SEMANTIC_DIM)
        if hit is not None:
            return hit
        vec = np.asarray(self.inner.semantic(text), dtype=np.float32)
        self.cache.put_vector("_text", 0, self.provider_id, f"semantic.{key}", vec)
        return vec


class CacheOnlyProvider:
    """Serves exclusively from the cache; any miss is an error."""

    def __init__(self, cache: EmbeddingCache, provider_id: str):
        self.cache = cache
        self.provider_id = provider_id

    def structural(self, frame: SampledFrame) -> np.ndarray:
        hit = self.cache.get_vector(
            frame.video_id, frame.sample_index, self.provider_id, "structural", STRUCTURAL_DIM
        )
        if hit is None:
            raise ProviderError(
                f"cache miss for structural embedding of {frame.video_id}[{frame.sample_index}]"
            )
        return hit

    def caption_text(self, frame: SampledFrame) -> str:
        hit = self.cache.get_caption(frame.video_id, frame.sample_index, self.provider_id)
        if hit is None:
            raise ProviderError(f"cache miss for caption of {frame.video_id}[{frame.sample_index}]")
        return hit

    def semantic(self, text: str) -> np.ndarray:
        key = hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()
        hit = self.cache.get_vector("_text", 0, self.provider_id, f"semantic.{key}", SEMANTIC_DIM)
        if hit is None:
            raise ProviderError(f"cache miss for semantic embedding of {text!r}")
        return hit


def _validated(vector: np.ndarray, dim: int, what: str) -> np.ndarray:
    vec = np.asarray(vector, dtype=np.float32).reshape(-1)
    if vec.shape[0] != dim:
        raise DimensionMismatchError(f"dimension mismatch {vec.shape[0]}≠{dim} for {what}")
    if not np.all(np.isfinite(vec)):
        raise ProviderError(f"non-finite {what} embedding")
    return vec


def structural_embedding(frame: SampledFrame, provider) -> StructuralEmbedding:
    """2048-d structural vector for a frame; dimension enforced at the boundary."""
    vec = _validated(provider.structural(frame), STRUCTURAL_DIM, "structural")
    return StructuralEmbedding(vector=vec, provider_id=provider.provider_id)


def caption_frame(
    frame: SampledFrame, provider, keywords: tuple[str, ...] = DEFAULT_REFUSAL_KEYWORDS
) -> Caption:
    """Caption a frame; provider failure degrades to the fallback caption."""
    try:
        raw = provider.caption_text(frame)
    except ProviderError as exc:
        logger.warning(
            "caption provider failed for %s[%d], using fallback: %s",
            frame.video_id,
            frame.sample_index,
            exc,
        )
        return Caption(raw="", sanitized=FALLBACK_CAPTION, is_fallback=True)
    return Caption.from_raw(raw, keywords)


def semantic_embedding(caption: Caption, provider) -> SemanticEmbedding:
    """768-d semantic vector of the sanitized caption text."""
    vec = _validated(provider.semantic(caption.sanitized), SEMANTIC_DIM, "semantic")
    return SemanticEmbedding(vector=vec, provider_id=provider.provider_id)
