"""Raw dataset annotations -> normalized ground-truth JSON.

TVSum: TSV rows (video_id, category, comma-separated per-shot importance
scores on 2-second shots), 20 rows per video, one per annotator. Per
annotator, keyframes are the center frames of the shots whose importance
falls in that annotator's top 25% for the video (ties resolved toward the
earlier shot).

SumMe: per-video MAT file with a binary per-frame user_score matrix
(n_frames x n_users). Per user, keyframes are the center frame (floored) of
each maximal run of selected frames.

Both converters are deterministic: converting twice yields byte-identical
JSON. The selection rule is recorded under the "converter" key.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SHOT_SECONDS = 2.0
TOP_FRACTION = 0.25


def _write_ground_truth(
    out_path: Path,
    video_id: str,
    fps: float,
    n_frames: int,
    annotators: list[list[int]],
    converter: dict,
) -> None:
    payload = {
        "video_id": video_id,
        "fps": fps,
        "n_frames": n_frames,
        "annotators": annotators,
        "converter": converter,
    }
    out_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _shot_center_frame(shot: int, fps: float, n_frames: int) -> int:
    # shot s spans [2s*fps, 2(s+1)*fps); its center frame is (2s+1)*fps
    center = int((2 * shot + 1) * fps)
    return min(center, n_frames - 1)


def convert_tvsum(
    anno_tsv: str | Path, video_metadata: str | Path, out_dir: str | Path
) -> list[Path]:
    """Convert a TVSum-style annotation TSV into per-video ground-truth JSON.

    ``video_metadata`` is a JSON file mapping video_id -> {"fps": x,
    "n_frames": n}. Returns the written file paths.
    """
    meta = json.loads(Path(video_metadata).read_text(encoding="utf-8"))
    per_video: dict[str, list[list[float]]] = {}
    order: list[str] = []
    for lineno, line in enumerate(Path(anno_tsv).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{anno_tsv}:{lineno}: expected 3 tab-separated fields")
        video_id, _category, score_csv = parts
        try:
            scores = [float(s) for s in score_csv.split(",")]
        except ValueError as exc:
            raise ValueError(f"{anno_tsv}:{lineno}: malformed score list") from exc
        if not scores:
            raise ValueError(f"{anno_tsv}:{lineno}: empty score list")
        if video_id not in per_video:
            per_video[video_id] = []
            order.append(video_id)
        per_video[video_id].append(scores)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for video_id in order:
        if video_id not in meta:
            raise ValueError(f"no video metadata for {video_id!r}")
        fps = float(meta[video_id]["fps"])
        n_frames = int(meta[video_id]["n_frames"])
        annotators = []
        for scores in per_video[video_id]:
            n_shots = len(scores)
            take = math.ceil(TOP_FRACTION * n_shots)
            ranked = sorted(range(n_shots), key=lambda s: (-scores[s], s))
            chosen = sorted(ranked[:take])
            annotators.append(
                sorted({_shot_center_frame(s, fps, n_frames) for s in chosen})
            )
        path = out_dir / f"{video_id}.json"
        _write_ground_truth(
            path,
            video_id,
            fps,
            n_frames,
            annotators,
            converter={
                "rule": "tvsum-top25-shot-centers",
                "shot_seconds": SHOT_SECONDS,
                "top_fraction": TOP_FRACTION,
            },
        )
        written.append(path)
    return written


def _run_centers(selected: np.ndarray) -> list[int]:
    """Center frame (floored) of each maximal run of selected frames."""
    centers = []
    run_start = None
    for i, flag in enumerate(selected):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            centers.append((run_start + i - 1) // 2)
            run_start = None
    if run_start is not None:
        centers.append((run_start + len(selected) - 1) // 2)
    return centers


def convert_summe(mat_file: str | Path, out_dir: str | Path) -> Path:
    """Convert a SumMe per-video MAT file into ground-truth JSON."""
    from scipy.io import loadmat

    mat_file = Path(mat_file)
    try:
        data = loadmat(str(mat_file))
    except Exception as exc:
        raise ValueError(f"malformed MAT file {mat_file}: {exc}") from exc
    if "user_score" not in data:
        raise ValueError(f"{mat_file}: missing 'user_score' matrix")
    user_score = np.asarray(data["user_score"], dtype=np.float64)
    if user_score.ndim != 2:
        raise ValueError(f"{mat_file}: user_score must be 2-D (frames x users)")
    n_frames = int(data["nFrames"].squeeze()) if "nFrames" in data else user_score.shape[0]
    fps = float(data["FPS"].squeeze()) if "FPS" in data else 30.0

    annotators = [
        _run_centers(user_score[:, u] > 0.5) for u in range(user_score.shape[1])
    ]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{mat_file.stem}.json"
    _write_ground_truth(
        path,
        mat_file.stem,
        fps,
        n_frames,
        annotators,
        converter={"rule": "summe-run-centers"},
    )
    return path
