"""F1 scoring of predicted keyframes against multi-annotator ground truth.

Protocol: greedy one-to-one matching of predicted and annotated frame indices
within a tolerance of tau seconds, F1 per annotator, averaged per video, then
averaged over videos. The protocol parameters are recorded in every report so
numbers are never compared across protocols silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

MATCHING_RULE = "greedy-one-to-one"


@dataclass(frozen=True)
class GroundTruth:
    video_id: str
    fps: float
    n_frames: int
    annotators: list[list[int]]  # sorted source frame indices per annotator


@dataclass(frozen=True)
class EvalReport:
    per_video: dict[str, dict[str, float]]  # video_id -> {precision, recall, f1}
    mean_f1: float
    protocol: dict

    def to_dict(self) -> dict:
        return {
            "per_video": self.per_video,
            "mean_f1": self.mean_f1,
            "protocol": self.protocol,
        }


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Parse and validate a normalized ground-truth JSON file."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key, kind in (("video_id", str), ("n_frames", int), ("annotators", list)):
        if key not in data or not isinstance(data[key], kind):
            raise ValueError(f"ground truth {path}: missing or invalid field {key!r}")
    if "fps" not in data or not isinstance(data["fps"], (int, float)) or data["fps"] <= 0:
        raise ValueError(f"ground truth {path}: missing or invalid field 'fps'")
    n_frames = data["n_frames"]
    annotators = data["annotators"]
    if len(annotators) < 1:
        raise ValueError(f"ground truth {path}: needs at least one annotator")
    normalized = []
    for i, ann in enumerate(annotators):
        if not isinstance(ann, list) or not all(isinstance(x, int) for x in ann):
            raise ValueError(f"ground truth {path}: annotator {i} is not a list of ints")
        if any(x < 0 or x >= n_frames for x in ann):
            raise ValueError(f"ground truth {path}: annotator {i} has out-of-range index")
        normalized.append(sorted(ann))
    return GroundTruth(
        video_id=data["video_id"],
        fps=float(data["fps"]),
        n_frames=n_frames,
        annotators=normalized,
    )


def match_keyframes(pred: list[int], gt: list[int], tau_frames: int) -> int:
    """Greedy one-to-one matching of indices within tau_frames.

    Pairs are visited by distance, then by (pred, gt) index; a pair is
    accepted iff both endpoints are still unmatched.
    """
    if tau_frames < 0:
        raise ValueError("tau_frames must be non-negative")
    pairs = sorted(
        (abs(p - g), p, g) for p in pred for g in gt if abs(p - g) <= tau_frames
    )
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    count = 0
    for _d, p, g in pairs:
        if p in used_pred or g in used_gt:
            continue
        used_pred.add(p)
        used_gt.add(g)
        count += 1
    return count


def f1_for_video(
    pred: list[int], gt: GroundTruth, tau_seconds: float = 1.0
) -> dict[str, float]:
    """Precision/recall/F1 averaged over annotators for one video."""
    tau_frames = int(round(tau_seconds * gt.fps))
    pred = sorted(pred)
    precisions, recalls, f1s = [], [], []
    for ann in gt.annotators:
        if not pred and not ann:
            precisions.append(1.0)
            recalls.append(1.0)
            f1s.append(1.0)
            continue
        matches = match_keyframes(pred, ann, tau_frames)
        p = matches / len(pred) if pred else 0.0
        r = matches / len(ann) if ann else 0.0
        f = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    k = len(gt.annotators)
    return {
        "precision": sum(precisions) / k,
        "recall": sum(recalls) / k,
        "f1": sum(f1s) / k,
    }


def aggregate(
    per_video: dict[str, dict[str, float]], tau_seconds: float = 1.0
) -> EvalReport:
    """Arithmetic mean of per-video F1 plus the protocol record."""
    if not per_video:
        raise ValueError("no videos to aggregate")
    mean_f1 = sum(v["f1"] for v in per_video.values()) / len(per_video)
    return EvalReport(
        per_video=per_video,
        mean_f1=mean_f1,
        protocol={"tau_seconds": tau_seconds, "matching": MATCHING_RULE},
    )
