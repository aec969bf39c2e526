"""Command line entry point: render a figure from a JSON plot spec."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from cbwk_plots.figure import PlotSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbwk-plots",
        description="Render the four-panel benchmark figure from harness CSV series.",
    )
    parser.add_argument("--spec", required=True, type=Path,
                        help="JSON plot spec (runs, reference lines, output path)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec.from_json_file(args.spec)
        out = render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
