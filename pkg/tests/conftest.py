from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from tripss.ingest import SampledFrame


def make_frame(
    pixels: np.ndarray,
    sample_index: int = 0,
    source_index: int | None = None,
    timestamp: float | None = None,
    video_id: str = "test",
) -> SampledFrame:
    pixels = np.ascontiguousarray(pixels.astype(np.uint8))
    pixels.flags.writeable = False
    return SampledFrame(
        video_id=video_id,
        source_index=sample_index if source_index is None else source_index,
        sample_index=sample_index,
        timestamp=float(sample_index) if timestamp is None else timestamp,
        pixels=pixels,
    )


def solid_frame(rgb: tuple[int, int, int], h: int = 32, w: int = 32, **kw) -> SampledFrame:
    return make_frame(np.full((h, w, 3), rgb, dtype=np.uint8), **kw)


def glyph_gray(h: int = 120, w: int = 176, val: float = 0.9, bg: float = 0.0) -> np.ndarray:
    """Black frame with a row of bright blocky glyphs, lightly anti-aliased."""
    img = np.full((h, w), bg)

    def E(x, y):
        img[y : y + 20, x : x + 3] = val
        img[y : y + 3, x : x + 12] = val
        img[y + 9 : y + 12, x : x + 10] = val
        img[y + 17 : y + 20, x : x + 12] = val

    def H(x, y):
        img[y : y + 20, x : x + 3] = val
        img[y : y + 20, x + 9 : x + 12] = val
        img[y + 9 : y + 12, x : x + 12] = val

    def T(x, y):
        img[y : y + 3, x : x + 12] = val
        img[y : y + 20, x + 5 : x + 8] = val

    def L(x, y):
        img[y : y + 20, x : x + 3] = val
        img[y + 17 : y + 20, x : x + 12] = val

    def F(x, y):
        img[y : y + 20, x : x + 3] = val
        img[y : y + 3, x : x + 12] = val
        img[y + 9 : y + 12, x : x + 10] = val

    xs = 20
    for fn in (E, F, H, L, T):
        fn(xs, 50)
        xs += 24
    u8 = (img * 255).astype(np.uint8)
    return cv2.GaussianBlur(u8, (3, 3), 0.8).astype(np.float64) / 255.0


def scene_frame(scene: int, k: int, h: int = 120, w: int = 160) -> np.ndarray:
    """Deterministic textured RGB frame for synthetic scene videos."""
    bases = [(200, 40, 40), (40, 180, 60), (40, 60, 200), (220, 200, 40)]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phase = 2 * np.pi * (k / 15.0)
    if scene % 4 == 0:
        wave = np.sin(2 * np.pi * yy / 16 + phase)
    elif scene % 4 == 1:
        wave = np.sin(2 * np.pi * xx / 16 + phase)
    elif scene % 4 == 2:
        wave = np.sin(2 * np.pi * (xx + yy) / 20 + phase)
    else:
        wave = np.sign(np.sin(2 * np.pi * xx / 24 + phase) * np.sin(2 * np.pi * yy / 24))
    rng = np.random.default_rng(scene * 1000 + k)
    noise = rng.integers(-10, 11, (h, w, 3))
    img = np.array(bases[scene % 4], dtype=np.float64)[None, None, :] + 40 * wave[..., None] + noise
    return np.clip(img, 0, 255).astype(np.uint8)


def make_scene_video(
    root: Path,
    name: str = "scenes",
    n_scenes: int = 4,
    frames_per_scene: int = 15,
    fps: float = 1.0,
    h: int = 120,
    w: int = 160,
) -> Path:
    """PNG-dir video with n_scenes distinct textured color segments."""
    vdir = root / name
    vdir.mkdir(parents=True, exist_ok=True)
    (vdir / "meta.json").write_text(json.dumps({"fps": fps}), encoding="utf-8")
    idx = 0
    for scene in range(n_scenes):
        for k in range(frames_per_scene):
            bgr = cv2.cvtColor(scene_frame(scene, k, h, w), cv2.COLOR_RGB2BGR)
            cv2.imwrite(str(vdir / f"{idx:06d}.png"), bgr)
            idx += 1
    return vdir


@pytest.fixture()
def scene_video(tmp_path: Path) -> Path:
    return make_scene_video(tmp_path)
