"""Command-line entry: ofuplots --in GLOB --out PATH --kind KIND."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotSpec, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ofuplots")
    parser.add_argument("--in", dest="input_glob", required=True,
                        help="glob of run or summary CSV files")
    parser.add_argument("--out", dest="output_path", required=True)
    parser.add_argument("--kind", choices=KINDS, required=True)
    args = parser.parse_args(argv)
    try:
        out = render(PlotSpec(args.input_glob, args.output_path, args.kind))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
