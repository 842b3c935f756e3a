"""Command line front end: `partplot render` turns metrics CSVs plus the
run manifest into a PNG line chart."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .render import FigureSpec, MalformedCSV, markers_from_manifest, render

EXIT_OK = 0
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="partplot",
        description="Render simulator metrics CSVs as line charts.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("render", help="render one figure")
    r.add_argument("--csv", action="append", required=True, metavar="FILE",
                   help="metrics CSV; repeat to overlay several series")
    r.add_argument("--manifest", required=True, metavar="FILE",
                   help="run manifest providing the event markers")
    r.add_argument("--out", default="figure.png", metavar="FILE.png")
    r.add_argument("--title", default="")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from .render import load_series

        scenarios = {load_series(p).scenario for p in args.csv}
        spec = FigureSpec(
            csv_paths=args.csv,
            markers=markers_from_manifest(args.manifest, scenarios),
            out=args.out, title=args.title)
        render(spec)
    except (MalformedCSV, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
