"""Command-line interface: extract, eval, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .pipeline import PipelineConfig, StageError, SummaryManifest, run_eval, run_extract


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        config = PipelineConfig.from_json(args.config)
    else:
        config = PipelineConfig()
    if getattr(args, "out", None):
        config.out_dir = args.out
    if getattr(args, "stub_providers", False):
        config.provider_mode = "stub"
    if getattr(args, "rate", None) is not None:
        config.sample_rate = args.rate
    if getattr(args, "tau", None) is not None:
        config.eval_tau_seconds = args.tau
    return config


def _cmd_extract(args: argparse.Namespace) -> int:
    config = _load_config(args)
    try:
        manifest = run_extract(config, args.input)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    counts = manifest.counts
    print(
        f"{manifest.video_id}: {counts['sampled']} frames -> {counts['clusters']} clusters "
        f"-> {counts['deduped']} keyframes (out: {config.out_dir})"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    manifest_dir = Path(args.manifests)
    if manifest_dir.is_file():
        manifests = [manifest_dir]
    else:
        manifests = sorted(manifest_dir.rglob("manifest.json"))
    if not manifests:
        print(f"error: no manifests under {manifest_dir}", file=sys.stderr)
        return 1
    try:
        report = run_eval(config, manifests, args.ground_truth)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for video_id, scores in sorted(report.per_video.items()):
        print(
            f"{video_id}: precision={scores['precision']:.4f} "
            f"recall={scores['recall']:.4f} f1={scores['f1']:.4f}"
        )
    print(f"mean F1 = {report.mean_f1:.4f} (tau={report.protocol['tau_seconds']}s)")
    if args.output:
        Path(args.output).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    try:
        manifest = SummaryManifest.from_json(args.manifest)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return 1
    counts = manifest.counts
    print(f"video:      {manifest.video_id}")
    print(
        "counts:     "
        + " -> ".join(
            f"{counts[k]} {k}"
            for k in ("sampled", "clusters", "medoids", "quality_kept", "deduped")
        )
    )
    params = manifest.cluster.get("params")
    dbcv = manifest.cluster.get("dbcv")
    note = manifest.cluster.get("note")
    print(f"cluster:    params={params} dbcv={dbcv}" + (f" ({note})" if note else ""))
    print(f"pca k:      {manifest.effective_pca_k}")
    for kf in manifest.keyframes:
        print(
            f"  kf #{kf['sample_index']:>5} t={kf['timestamp']:>8.2f}s "
            f"cluster={kf['cluster']} {kf['image']}  {kf['caption'][:60]}"
        )
    for drop in manifest.drops:
        print(f"  drop #{drop['sample_index']:>4} at {drop['stage']}: {drop['reason']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripss", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="extract keyframes from a video")
    p_extract.add_argument("--input", required=True, help="video file or PNG-dir video")
    p_extract.add_argument("--config", help="JSON config file")
    p_extract.add_argument("--out", help="output directory (overrides config)")
    p_extract.add_argument("--rate", type=float, help="sampling rate in frames/second")
    p_extract.add_argument(
        "--stub-providers", action="store_true", help="force offline deterministic providers"
    )
    p_extract.set_defaults(func=_cmd_extract)

    p_eval = sub.add_parser("eval", help="score manifests against ground truth")
    p_eval.add_argument("--manifests", required=True, help="manifest file or directory")
    p_eval.add_argument("--ground-truth", required=True, help="directory of <video_id>.json files")
    p_eval.add_argument("--tau", type=float, help="matching tolerance in seconds")
    p_eval.add_argument("--config", help="JSON config file")
    p_eval.add_argument("--output", help="write the report JSON here")
    p_eval.set_defaults(func=_cmd_eval)

    p_inspect = sub.add_parser("inspect", help="pretty-print a manifest")
    p_inspect.add_argument("manifest")
    p_inspect.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
