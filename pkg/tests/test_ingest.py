from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from tripss.ingest import IngestError, open_video, sample_frames, to_grayscale

from conftest import make_frame


def _write_mp4(path: Path, n_frames: int = 300, fps: float = 30.0, size=(64, 48)) -> Path:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, size)
    assert writer.isOpened()
    rng = np.random.default_rng(0)
    for _ in range(n_frames):
        writer.write(rng.integers(0, 255, (size[1], size[0], 3), dtype=np.uint8))
    writer.release()
    return path


def _write_png_video(root: Path, n_frames: int, fps: float, size=(24, 32)) -> Path:
    vdir = root / "pngvid"
    vdir.mkdir()
    (vdir / "meta.json").write_text(json.dumps({"fps": fps}), encoding="utf-8")
    rng = np.random.default_rng(1)
    for i in range(n_frames):
        cv2.imwrite(str(vdir / f"{i:06d}.png"), rng.integers(0, 255, (*size, 3), dtype=np.uint8))
    return vdir


def test_open_video_populates_meta(tmp_path):
    path = _write_mp4(tmp_path / "clip.mp4")
    meta = open_video(path)
    assert meta.fps == pytest.approx(30.0)
    assert meta.n_source_frames == 300
    assert meta.duration == pytest.approx(10.0)
    assert meta.width == 64 and meta.height == 48
    assert abs(meta.n_source_frames - meta.fps * meta.duration) <= 1


def test_open_video_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_video(tmp_path / "nope.mp4")


def test_open_video_empty_png_dir(tmp_path):
    vdir = tmp_path / "empty"
    vdir.mkdir()
    (vdir / "meta.json").write_text(json.dumps({"fps": 10.0}), encoding="utf-8")
    with pytest.raises(IngestError, match="empty stream"):
        open_video(vdir)


def test_open_video_undecodable(tmp_path):
    junk = tmp_path / "junk.mp4"
    junk.write_bytes(b"not a video at all")
    with pytest.raises(IngestError):
        open_video(junk)


def test_sample_one_fps_from_10s_clip(tmp_path):
    meta = open_video(_write_mp4(tmp_path / "clip.mp4"))
    frames = sample_frames(meta, rate=1.0)
    assert len(frames) == 10
    assert [f.timestamp for f in frames] == list(range(10))
    assert [f.sample_index for f in frames] == list(range(10))


def test_sample_nearest_frame_mapping(tmp_path):
    meta = open_video(_write_mp4(tmp_path / "clip.mp4"))
    frames = sample_frames(meta, rate=2.0)
    assert len(frames) == 20
    assert [f.source_index for f in frames] == [int(round(k / 2 * 30)) for k in range(20)]
    assert frames[1].source_index == 15 and frames[2].source_index == 30


def test_sample_identity_at_source_rate(tmp_path):
    vdir = _write_png_video(tmp_path, n_frames=12, fps=6.0)
    meta = open_video(vdir)
    frames = sample_frames(meta, rate=meta.fps)
    assert [f.source_index for f in frames] == list(range(12))


def test_sample_rate_above_fps_rejected(tmp_path):
    meta = open_video(_write_png_video(tmp_path, n_frames=5, fps=2.0))
    with pytest.raises(ValueError, match="exceeds"):
        sample_frames(meta, rate=4.0)


def test_sample_count_invariant(tmp_path):
    vdir = _write_png_video(tmp_path, n_frames=17, fps=3.0)
    meta = open_video(vdir)
    for rate in (0.5, 1.0, 1.5, 3.0):
        frames = sample_frames(meta, rate)
        assert abs(len(frames) - (int(meta.duration * rate) + 1)) <= 1


def test_sampling_is_deterministic(tmp_path):
    path = _write_mp4(tmp_path / "clip.mp4", n_frames=60)
    meta = open_video(path)
    run1 = sample_frames(meta, rate=2.0)
    run2 = sample_frames(meta, rate=2.0)
    assert len(run1) == len(run2)
    for a, b in zip(run1, run2):
        assert np.array_equal(a.pixels, b.pixels)


def test_frames_are_immutable(tmp_path):
    meta = open_video(_write_png_video(tmp_path, n_frames=3, fps=1.0))
    frame = sample_frames(meta, 1.0)[0]
    with pytest.raises(ValueError):
        frame.pixels[0, 0, 0] = 1


def test_grayscale_extremes():
    white = make_frame(np.full((4, 4, 3), 255, dtype=np.uint8))
    black = make_frame(np.zeros((4, 4, 3), dtype=np.uint8))
    assert np.allclose(to_grayscale(white), 1.0)
    assert np.allclose(to_grayscale(black), 0.0)


def test_grayscale_pure_red():
    red = make_frame(np.tile(np.array([255, 0, 0], dtype=np.uint8), (4, 4, 1)))
    assert np.allclose(to_grayscale(red), 0.299)


def test_grayscale_of_gray_equals_value():
    rng = np.random.default_rng(3)
    for v in rng.integers(0, 256, size=8):
        frame = make_frame(np.full((3, 3, 3), v, dtype=np.uint8))
        assert np.allclose(to_grayscale(frame), v / 255.0)
    gray = to_grayscale(make_frame(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)))
    assert gray.min() >= 0.0 and gray.max() <= 1.0
