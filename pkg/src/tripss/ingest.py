"""Video decoding and uniform frame sampling.

Two input backends: any container OpenCV can decode (MP4/H.264 included), or
a directory of numbered PNG files (``%06d.png``) with a sidecar ``meta.json``
declaring the fps, used as a pre-decoded video in tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

logger = logging.getLogger(__name__)

PNG_FRAME_PATTERN = "{:06d}.png"


class IngestError(RuntimeError):
    """Raised when a video cannot be opened or decoded."""


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    path: str
    fps: float
    n_source_frames: int
    width: int
    height: int
    duration: float


@dataclass(frozen=True)
class SampledFrame:
    video_id: str
    source_index: int
    sample_index: int
    timestamp: float
    pixels: np.ndarray  # H x W x 3 uint8, sRGB

    def png_bytes(self) -> bytes:
        """Deterministic PNG encoding of the frame (used as provider payload)."""
        ok, buf = cv2.imencode(".png", cv2.cvtColor(self.pixels, cv2.COLOR_RGB2BGR))
        if not ok:
            raise IngestError(f"PNG encoding failed for frame {self.sample_index}")
        return buf.tobytes()


def _is_png_dir(path: Path) -> bool:
    return path.is_dir() and (path / "meta.json").exists()


def _png_dir_frames(path: Path) -> list[Path]:
    frames = sorted(path.glob("*.png"))
    return frames


def open_video(path: str | Path) -> VideoMeta:
    """Probe a video file (or PNG-dir video) without decoding frames.

    Raises FileNotFoundError for a missing path and IngestError for
    undecodable or empty streams.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")

    if _is_png_dir(path):
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        fps = float(meta["fps"])
        if fps <= 0:
            raise IngestError(f"invalid fps {fps} in {path / 'meta.json'}")
        frames = _png_dir_frames(path)
        if not frames:
            raise IngestError(f"empty stream: no PNG frames in {path}")
        first = cv2.imread(str(frames[0]), cv2.IMREAD_COLOR)
        if first is None:
            raise IngestError(f"unreadable frame file {frames[0]}")
        h, w = first.shape[:2]
        n = len(frames)
        return VideoMeta(
            video_id=path.name,
            path=str(path),
            fps=fps,
            n_source_frames=n,
            width=w,
            height=h,
            duration=n / fps,
        )

    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise IngestError(f"undecodable video: {path}")
        fps = cap.get(cv2.CAP_PROP_FPS)
        n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        w = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        h = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
        if fps <= 0 or n <= 0:
            raise IngestError(f"empty stream: {path} (fps={fps}, frames={n})")
        return VideoMeta(
            video_id=path.stem,
            path=str(path),
            fps=float(fps),
            n_source_frames=n,
            width=w,
            height=h,
            duration=n / float(fps),
        )
    finally:
        cap.release()


def _sample_plan(meta: VideoMeta, rate: float) -> list[tuple[int, int, float]]:
    """(sample_index, source_index, timestamp) triples for uniform sampling."""
    plan = []
    k = 0
    while True:
        t = k / rate
        src = int(round(t * meta.fps))
        if src >= meta.n_source_frames:
            break
        plan.append((k, src, t))
        k += 1
    return plan


def sample_frames(meta: VideoMeta, rate: float = 1.0) -> list[SampledFrame]:
    """Decode frames at timestamps k/rate, mapped to the nearest source frame.

    Decoding is sequential (container seeking is stateful); the returned
    frames are immutable and safe to share across threads.
    """
    if rate <= 0:
        raise ValueError(f"sampling rate must be positive, got {rate}")
    if rate > meta.fps:
        raise ValueError(f"sampling rate {rate} exceeds source fps {meta.fps}")

    plan = _sample_plan(meta, rate)
    if not plan:
        return []

    path = Path(meta.path)
    frames: list[SampledFrame] = []

    def emit(sample_index: int, source_index: int, t: float, bgr: np.ndarray) -> None:
        rgb = np.ascontiguousarray(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
        rgb.flags.writeable = False
        frames.append(
            SampledFrame(
                video_id=meta.video_id,
                source_index=source_index,
                sample_index=sample_index,
                timestamp=t,
                pixels=rgb,
            )
        )

    if _is_png_dir(path):
        files = _png_dir_frames(path)
        for k, src, t in plan:
            bgr = cv2.imread(str(files[src]), cv2.IMREAD_COLOR)
            if bgr is None:
                raise IngestError(f"decode failure at source_index {src} ({files[src]})")
            emit(k, src, t, bgr)
        return frames

    wanted: dict[int, list[tuple[int, float]]] = {}
    for k, src, t in plan:
        wanted.setdefault(src, []).append((k, t))
    last_needed = max(wanted)

    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise IngestError(f"undecodable video: {path}")
        for src in range(last_needed + 1):
            ok, bgr = cap.read()
            if not ok or bgr is None:
                raise IngestError(f"decode failure at source_index {src}")
            for k, t in wanted.get(src, ()):
                emit(k, src, t, bgr)
    finally:
        cap.release()
    return frames


def to_grayscale(frame: SampledFrame | np.ndarray) -> np.ndarray:
    """Luma in [0, 1]: (0.299 R + 0.587 G + 0.114 B) / 255."""
    pixels = frame.pixels if isinstance(frame, SampledFrame) else frame
    rgb = pixels.astype(np.float64)
    return (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
