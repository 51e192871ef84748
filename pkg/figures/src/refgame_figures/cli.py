"""Command line for figure rendering.

Exit codes: 0 success, 1 runtime failure, 2 schema/usage error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .render import FIGURE_KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refgame-figures", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--kind", required=True, choices=sorted(FIGURE_KINDS))
    parser.add_argument("--input", nargs="+", required=True, help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image (png/svg)")
    parser.add_argument("--labels", nargs="+", help="series labels (learning_curves)")
    parser.add_argument("--title")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=args.input, output=args.out,
                      labels=args.labels, title=args.title)
    try:
        pts = render(spec)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({len(pts.points)} points)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
