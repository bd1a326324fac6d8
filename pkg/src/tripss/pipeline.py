"""End-to-end orchestration: ingest -> features -> fusion -> clustering -> refinement.

Produces keyframe PNGs, a contact sheet and a manifest JSON. Stage failures
are reported with the stage name and any partially written outputs are
removed so downstream evaluation never reads a half-written manifest.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import cluster as cluster_mod
from . import evaluation
from .fusion import DEFAULT_PCA_K, dump_embeddings, fuse, stack_embeddings
from .ingest import SampledFrame, open_video, sample_frames
from .perceptual import color_feature, dump_color_features
from .providers import (
    CachedProvider,
    CacheOnlyProvider,
    EmbeddingCache,
    RemoteProvider,
    StubProvider,
    caption_frame,
    resolve_provider_url,
    semantic_embedding,
    structural_embedding,
)
from .refine import RefineThresholds, dedup, quality_gate

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CONTACT_SHEET_NAME = "contact_sheet.png"

PROVIDER_MODES = ("stub", "remote", "cache-only")


class StageError(RuntimeError):
    """Pipeline failure annotated with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    sample_rate: float = 1.0
    provider_mode: str = "stub"  # stub | remote | cache-only
    provider_url: str = "http://127.0.0.1:8765"
    provider_id: str = "remote"
    cache_dir: str | None = None
    pca_k: int = DEFAULT_PCA_K
    grid_min_cluster_sizes: list[int] = field(
        default_factory=lambda: list(cluster_mod.DEFAULT_MIN_CLUSTER_SIZES)
    )
    grid_min_samples: list[int] = field(
        default_factory=lambda: list(cluster_mod.DEFAULT_MIN_SAMPLES)
    )
    refine: RefineThresholds = field(default_factory=RefineThresholds)
    eval_tau_seconds: float = 1.0
    out_dir: str = "out"
    workers: int = 4
    dump_features: bool = False  # also write color/embedding f32 dumps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        if "refine" in data and isinstance(data["refine"], dict):
            data["refine"] = RefineThresholds(**data["refine"])
        cfg = cls(**data)
        if cfg.provider_mode not in PROVIDER_MODES:
            raise ValueError(f"provider_mode must be one of {PROVIDER_MODES}")
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SummaryManifest:
    video_id: str
    config: dict
    counts: dict  # sampled, clusters, clustered_frames, medoids, quality_kept, deduped
    effective_pca_k: int
    cluster: dict  # params, dbcv, note
    keyframes: list[dict]
    drops: list[dict]
    cluster_report: list[dict]
    quality_reports: list[dict]
    dedup_decisions: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SummaryManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


def _make_provider(config: PipelineConfig):
    if config.provider_mode == "stub":
        provider = StubProvider()
    elif config.provider_mode == "remote":
        provider = RemoteProvider(
            resolve_provider_url(config.provider_url), provider_id=config.provider_id
        )
    elif config.provider_mode == "cache-only":
        if not config.cache_dir:
            raise ValueError("cache-only mode requires cache_dir")
        return CacheOnlyProvider(EmbeddingCache(config.cache_dir), config.provider_id)
    else:
        raise ValueError(f"unknown provider_mode {config.provider_mode!r}")
    if config.cache_dir:
        provider = CachedProvider(provider, EmbeddingCache(config.cache_dir))
    return provider


def _contact_sheet(frames: list[SampledFrame], out_path: Path) -> None:
    """Grid of keyframes with timestamp captions burned in."""
    if not frames:
        return
    tile_w = 320
    tiles = []
    for f in frames:
        h, w = f.pixels.shape[:2]
        tile_h = max(1, int(round(h * tile_w / w)))
        bgr = cv2.cvtColor(f.pixels, cv2.COLOR_RGB2BGR)
        tile = cv2.resize(bgr, (tile_w, tile_h), interpolation=cv2.INTER_AREA)
        label = f"t={f.timestamp:.1f}s  #{f.sample_index}"
        cv2.putText(tile, label, (6, 18), cv2.FONT_HERSHEY_SIMPLEX, 0.5, (0, 0, 0), 3, cv2.LINE_8)
        cv2.putText(tile, label, (6, 18), cv2.FONT_HERSHEY_SIMPLEX, 0.5, (255, 255, 255), 1, cv2.LINE_8)
        tiles.append(tile)
    cols = min(4, len(tiles))
    rows = (len(tiles) + cols - 1) // cols
    tile_h = max(t.shape[0] for t in tiles)
    sheet = np.zeros((rows * tile_h, cols * tile_w, 3), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        sheet[r * tile_h : r * tile_h + tile.shape[0], c * tile_w : (c + 1) * tile_w] = tile
    cv2.imwrite(str(out_path), sheet)


def run_extract(config: PipelineConfig, video_path: str | Path) -> SummaryManifest:
    """Run the full extraction pipeline for one video and write its outputs."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def stage(name: str):
        class _Ctx:
            def __enter__(self):
                logger.info("stage %s", name)

            def __exit__(self, exc_type, exc, tb):
                if exc is not None and not isinstance(exc, StageError):
                    for p in written:
                        p.unlink(missing_ok=True)
                    raise StageError(name, exc) from exc
                return False

        return _Ctx()

    with stage("ingest"):
        meta = open_video(video_path)
        frames = sample_frames(meta, config.sample_rate)
        if not frames:
            raise ValueError("no frames sampled")

    with stage("providers"):
        provider = _make_provider(config)
        color_rows = [None] * len(frames)
        struct_rows = [None] * len(frames)
        semantic_rows = [None] * len(frames)
        captions = [None] * len(frames)

        def extract(i_frame: tuple[int, SampledFrame]) -> None:
            i, frame = i_frame
            color_rows[i] = color_feature(frame).vector
            struct_rows[i] = structural_embedding(frame, provider).vector
            cap = caption_frame(frame, provider)
            captions[i] = cap
            semantic_rows[i] = semantic_embedding(cap, provider).vector

        with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
            list(pool.map(extract, enumerate(frames)))
        color_mat = np.stack(color_rows)
        struct_mat = np.stack(struct_rows)
        semantic_mat = np.stack(semantic_rows)

    with stage("fusion"):
        if len(frames) == 1:
            # effective k = min(k, n - 1) collapses to 0 for a single frame
            fused = np.zeros((1, 0))
            effective_k = 0
        else:
            embeddings, model = fuse(
                color_mat,
                struct_mat,
                semantic_mat,
                k=config.pca_k,
                sample_indices=[f.sample_index for f in frames],
            )
            fused = stack_embeddings(embeddings)
            effective_k = model.k

    with stage("cluster"):
        grid = [
            cluster_mod.ClusterParams(mcs, ms)
            for mcs in config.grid_min_cluster_sizes
            if 2 <= mcs <= len(frames) // 2
            for ms in config.grid_min_samples
            if 1 <= ms <= mcs and ms < len(frames)
        ]
        solution = cluster_mod.grid_search(fused, grid or None)
        medoid_rows = sorted(solution.medoid_indices.items(), key=lambda kv: kv[1])

    with stage("refine"):
        reports = []
        candidates = []
        for label, row in medoid_rows:
            frame = frames[row]
            report = quality_gate(frame, config.refine)
            reports.append((label, frame, report))
        drops = []
        for label, frame, report in reports:
            if report.verdict == "keep":
                candidates.append((label, frame, report))
            else:
                drops.append(
                    {
                        "sample_index": frame.sample_index,
                        "stage": "quality",
                        "reason": report.drop_reason,
                    }
                )
        kept_frames, decisions = dedup(
            [frame for _label, frame, _r in candidates],
            threshold=config.refine.dedup_ssim,
            sharpness=[r.laplacian_var for _l, _f, r in candidates],
        )
        for d in decisions:
            drops.append({"sample_index": d.dropped, "stage": "dedup", "reason": "near_duplicate"})

    with stage("emit"):
        label_by_sample = {frame.sample_index: label for label, frame, _r in candidates}
        report_by_sample = {frame.sample_index: r for _l, frame, r in reports}
        caption_by_sample = {f.sample_index: c for f, c in zip(frames, captions)}
        keyframes = []
        for frame in kept_frames:
            name = f"kf_{frame.sample_index:06d}.png"
            path = out_dir / name
            cv2.imwrite(str(path), cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR))
            written.append(path)
            r = report_by_sample[frame.sample_index]
            keyframes.append(
                {
                    "sample_index": frame.sample_index,
                    "source_index": frame.source_index,
                    "timestamp": frame.timestamp,
                    "cluster": label_by_sample[frame.sample_index],
                    "caption": caption_by_sample[frame.sample_index].sanitized,
                    "image": name,
                    "quality": {
                        "mean_gray": r.mean_gray,
                        "var_gray": r.var_gray,
                        "laplacian_var": r.laplacian_var,
                        "edge_density": r.edge_density,
                        "hist_peak_mass": r.hist_peak_mass,
                        "saliency_ratio": r.saliency_ratio,
                        "has_text": r.has_text,
                    },
                }
            )
        sheet_path = out_dir / CONTACT_SHEET_NAME
        _contact_sheet(kept_frames, sheet_path)
        if kept_frames:
            written.append(sheet_path)

        if config.dump_features:
            dump_color_features(
                out_dir / "color_features", color_mat, [f.sample_index for f in frames]
            )
            dump_embeddings(out_dir / "fused_embeddings", fused, meta.video_id)
            written += [
                out_dir / "color_features.bin",
                out_dir / "color_features.json",
                out_dir / "fused_embeddings.bin",
                out_dir / "fused_embeddings.json",
            ]

        n_clusters = len(set(solution.labels.tolist()) - {cluster_mod.NOISE})
        manifest = SummaryManifest(
            video_id=meta.video_id,
            config=config.to_dict(),
            counts={
                "sampled": len(frames),
                "clusters": n_clusters,
                "clustered_frames": int((solution.labels != cluster_mod.NOISE).sum()),
                "medoids": len(medoid_rows),
                "quality_kept": len(candidates),
                "deduped": len(kept_frames),
            },
            effective_pca_k=effective_k,
            cluster={
                "params": None
                if solution.params is None
                else {
                    "min_cluster_size": solution.params.min_cluster_size,
                    "min_samples": solution.params.min_samples,
                },
                "dbcv": solution.dbcv,
                "note": solution.note,
            },
            keyframes=keyframes,
            drops=drops,
            cluster_report=solution.report,
            quality_reports=[asdict(r) for _l, _f, r in reports],
            dedup_decisions=[asdict(d) for d in decisions],
        )
        manifest_path = out_dir / MANIFEST_NAME
        manifest.write(manifest_path)
        written.append(manifest_path)
    return manifest


def run_eval(
    config: PipelineConfig,
    manifest_paths: list[str | Path],
    ground_truth_dir: str | Path,
) -> evaluation.EvalReport:
    """Score manifests against ground truth JSON files named <video_id>.json."""
    gt_dir = Path(ground_truth_dir)
    per_video: dict[str, dict[str, float]] = {}
    for path in manifest_paths:
        manifest = SummaryManifest.from_json(path)
        gt_path = gt_dir / f"{manifest.video_id}.json"
        if not gt_path.exists():
            raise FileNotFoundError(
                f"missing ground truth for video {manifest.video_id!r}: {gt_path}"
            )
        gt = evaluation.load_ground_truth(gt_path)
        pred = sorted(kf["source_index"] for kf in manifest.keyframes)
        per_video[manifest.video_id] = evaluation.f1_for_video(
            pred, gt, tau_seconds=config.eval_tau_seconds
        )
    return evaluation.aggregate(per_video, tau_seconds=config.eval_tau_seconds)
