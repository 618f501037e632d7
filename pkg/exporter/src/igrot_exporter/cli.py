"""CLI: embed image listings and caption tables into engine store files."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .jobs import ExportJob, export_images, export_null_text, export_texts, load_listing
from .ueb import ExportError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igrot-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--encoder", required=True, help="e.g. hash-64, clip-b32, clip-l14")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--batch", type=int, default=8)
        p.add_argument("--text-feature", choices=["projection", "pooled"], default="projection")

    p = sub.add_parser("images", help="embed an id<TAB>path listing into images.ueb")
    p.add_argument("--list", dest="listing", required=True)
    p.add_argument("--skip-unreadable", action="store_true")
    common(p)

    p = sub.add_parser("texts", help="embed an id<TAB>text table into texts.ueb")
    p.add_argument("--table", required=True)
    common(p)

    p = sub.add_parser("null", help="embed the empty string into null.ueb")
    common(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            encoder_tag=args.encoder,
            out_dir=args.out,
            batch_size=args.batch,
            on_unreadable="skip" if getattr(args, "skip_unreadable", False) else "abort",
            text_feature=args.text_feature,
        )
        if args.command == "images":
            out = export_images(job, load_listing(args.listing))
        elif args.command == "texts":
            out = export_texts(job, load_listing(args.table))
        else:
            out = export_null_text(job)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
