"""tripss-sidecar command line: serve the provider API or convert datasets."""

from __future__ import annotations

import argparse
import logging
import sys


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .app import create_app
    from .backends import make_backend

    backend = make_backend(args.backend, caption_model=args.caption_model)
    app = create_app(backend, load_async=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_convert(args: argparse.Namespace) -> int:
    from .convert import convert_summe, convert_tvsum

    try:
        if args.dataset == "tvsum":
            if not args.video_meta:
                print("error: --video-meta is required for tvsum", file=sys.stderr)
                return 2
            written = convert_tvsum(args.input, args.video_meta, args.out)
        else:
            written = [convert_summe(args.input, args.out)]
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripss-sidecar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the provider HTTP service")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument(
        "--backend", choices=("torch", "hash"), default="torch",
        help="'torch' serves real models; 'hash' is the deterministic test backend",
    )
    p_serve.add_argument(
        "--caption-model", default=None,
        help="hf model name for the captioner (torch backend); omit to disable /caption",
    )
    p_serve.set_defaults(func=_cmd_serve)

    p_convert = sub.add_parser("convert", help="convert raw annotations to ground-truth JSON")
    p_convert.add_argument("--dataset", choices=("tvsum", "summe"), required=True)
    p_convert.add_argument("--in", dest="input", required=True, help="TSV or MAT input path")
    p_convert.add_argument("--out", required=True, help="output directory")
    p_convert.add_argument("--video-meta", help="JSON {video_id: {fps, n_frames}} (tvsum)")
    p_convert.set_defaults(func=_cmd_convert)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
