"""`droplet-plots render --in DIR --out DIR [--format svg|png]`."""

from __future__ import annotations

import argparse
import sys

from .render import SchemaError, render_tree


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="droplet-plots")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render figures for every run under a directory")
    p.add_argument("--in", dest="input_root", required=True)
    p.add_argument("--out", dest="output_root", required=True)
    p.add_argument("--format", dest="image_format", choices=("svg", "png"), default="svg")
    p.add_argument("--scale", choices=("semilog", "loglog"), default="semilog")
    args = parser.parse_args(argv)
    try:
        paths = render_tree(args.input_root, args.output_root,
                            image_format=args.image_format, scale=args.scale)
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        sys.exit(1)
    for path in paths:
        print(path)


if __name__ == "__main__":
    main()
