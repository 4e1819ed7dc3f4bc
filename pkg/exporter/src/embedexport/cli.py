"""Command line entry: read a tileset manifest, write a TRNB1 bag dataset."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, ExportError
from .export import ExportJob, export, load_tileset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="DenseNet-121 tile features to bag files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed tiles listed in a tileset manifest")
    p.add_argument("--input", required=True, help="tileset/1 manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--device", default="cpu")
    p.add_argument("--pretrained", action="store_true",
                   help="load published weights instead of the seeded random init")
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_export(args) -> int:
    job = ExportJob(
        tileset=load_tileset(args.input),
        out=args.out,
        batch_size=args.batch_size,
        device=args.device,
        pretrained=args.pretrained,
        seed=args.seed,
    )
    report = export(job)
    for slide_id, reason in report.failed:
        print(f"FAIL {slide_id}: {reason}", file=sys.stderr)
    print(
        f"exported {len(report.exported)} slides "
        f"({report.bags_written} bags), {len(report.failed)} failed"
    )
    return 1 if report.failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
