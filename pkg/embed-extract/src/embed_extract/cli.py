"""Command line front end: embed-extract --manifest M --model-dir D [--layers 4,7]."""

import argparse
import sys
from pathlib import Path

from embed_extract.extract import ExtractError, ExtractJob, extract


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="embed-extract", description=__doc__)
    ap.add_argument("--manifest", type=Path, required=True, help="corpus manifest (JSONL)")
    ap.add_argument(
        "--model-dir", type=Path, required=True, help="local pretrained encoder directory"
    )
    ap.add_argument(
        "--layers",
        default="4,7",
        help="comma-separated 1-based transformer block indices (default 4,7)",
    )
    ap.add_argument(
        "--out-dir",
        type=Path,
        default=None,
        help="where to write .emb files (default: next to each audio file)",
    )
    return ap


def parse_layers(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ExtractError(f"bad --layers value {text!r}: {exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExtractJob(
            manifest=args.manifest,
            model_dir=args.model_dir,
            layers=parse_layers(args.layers),
            out_dir=args.out_dir,
        )
        written = extract(job)
    except (ExtractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
