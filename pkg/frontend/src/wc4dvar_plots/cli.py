"""Command line entry point: one figure per invocation."""

import argparse
import sys

from .figures import KINDS, FigureSpec, PlotInputError, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wc4dvar-plot",
        description="Regenerate figures from wc4dvar CSV outputs.")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV")
    parser.add_argument("--out", required=True, metavar="IMAGE")
    parser.add_argument("--x-scale", choices=("linear", "log"),
                        default="linear")
    parser.add_argument("--y-scale", choices=("linear", "log"),
                        default="log")
    parser.add_argument("--optimum", type=float, default=None,
                        help="draw a horizontal line at this objective value")
    parser.add_argument("--mode", default=None,
                        help="grid slice for map/surface figures")
    parser.add_argument("--p", type=int, default=None,
                        help="process count slice for map/surface figures")
    parser.add_argument("--weight", action="append", default=[],
                        metavar="OP=W",
                        help="cost weight per operation column, repeatable")
    return parser


def _parse_weights(pairs):
    weights = {}
    for item in pairs:
        name, _, value = item.partition("=")
        if not _:
            raise PlotInputError(f"expected OP=W, got {item!r}")
        weights[name] = float(value)
    return weights


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                          output=args.out, x_scale=args.x_scale,
                          y_scale=args.y_scale, optimum=args.optimum,
                          mode=args.mode, p=args.p,
                          weights=_parse_weights(args.weight))
        path = render(spec)
    except (PlotInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
