"""Command line driver: generate, run, cost, map.

Every subcommand reads and writes versioned files (problem JSON, result
manifests, trace and map CSVs), so runs can be priced and mapped later
without recomputation.  The reporting subcommands render matplotlib
figures next to their delimited output.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .burgers import BurgersConfig, generate_problem, load_problem, save_problem
from .errors import IntegrityError, NumericalError, ParameterError
from .experiments import (DEFAULT_VARIANTS, ExperimentGrid, best_method_map,
                          cells_to_json, cost_rows, costs_to_csv, load_store,
                          map_to_csv, run_matrix, save_store)
from .gaussnewton import GNControls

_CONFIG_FLAGS = (
    ("n", int), ("dx", float), ("dt", float), ("nu", float),
    ("nsub", int), ("steps_per_subwindow", int),
    ("obs_per_subwindow", int), ("amplitude", float),
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wc4dvar",
        description="Weak-constraint 4D-Var experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="create a twin-experiment problem")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="problem.json")
    for name, kind in _CONFIG_FLAGS:
        gen.add_argument(f"--{name.replace('_', '-')}", type=kind,
                         default=None, dest=name)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run solver variants and store traces")
    which = run.add_mutually_exclusive_group(required=True)
    which.add_argument("--variant", nargs="+", metavar="NAME",
                       help="one or more names such as SAQ15-M-0")
    which.add_argument("--matrix", action="store_true",
                       help="run the full 36-variant study")
    run.add_argument("--problem", default=None,
                     help="problem JSON (default: regenerate from --seed)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--n-inner", type=int, default=None)
    run.add_argument("--max-outer", type=int, default=None)
    run.add_argument("--eps-q", type=float, default=None)
    run.add_argument("--eps-r", type=float, default=None)
    run.add_argument("--trace-inner", action="store_true",
                     help="record objective values along inner iterations")
    run.add_argument("--no-reference", action="store_true",
                     help="skip the fully converged reference run")
    run.add_argument("--no-figures", action="store_true")
    run.add_argument("--out-dir", default="results")
    run.set_defaults(func=cmd_run)

    cost = sub.add_parser("cost", help="price stored runs with the cost model")
    cost.add_argument("--results", default="results")
    cost.add_argument("--p", type=int, nargs="+", default=None)
    cost.add_argument("--c-dinv", type=float, nargs="+", default=None)
    cost.add_argument("--mode", nargs="+", default=None,
                      choices=("sequential", "fully_mpi", "hybrid"))
    cost.add_argument("--out", default=None,
                      help="output CSV (default <results>/costs.csv)")
    cost.set_defaults(func=cmd_cost)

    mp = sub.add_parser("map", help="best-method map and min-cost surface")
    mp.add_argument("--results", default="results")
    mp.add_argument("--p", type=int, nargs="+", default=None)
    mp.add_argument("--c-dinv", type=float, nargs="+", default=None)
    mp.add_argument("--rho", type=float, nargs="+", default=None)
    mp.add_argument("--mode", nargs="+", default=None,
                    choices=("sequential", "fully_mpi", "hybrid"))
    mp.add_argument("--no-figures", action="store_true")
    mp.add_argument("--out-dir", default=None,
                    help="output directory (default <results>)")
    mp.set_defaults(func=cmd_map)

    return parser


def cmd_generate(args):
    overrides = {name: getattr(args, name) for name, _ in _CONFIG_FLAGS
                 if getattr(args, name) is not None}
    cfg = BurgersConfig(**overrides)
    problem = generate_problem(cfg, args.seed)
    save_problem(problem, args.out)
    print(f"wrote {args.out} (n={cfg.n}, subwindows={cfg.nsub}, "
          f"state dim {cfg.state_dim}, seed {args.seed})")
    return 0


def _load_or_generate(args):
    if args.problem:
        return load_problem(args.problem)
    return generate_problem(seed=args.seed)


def _controls_from(args):
    kwargs = {}
    if args.n_inner is not None:
        kwargs["n_inner"] = args.n_inner
    if args.max_outer is not None:
        kwargs["max_outer"] = args.max_outer
    if args.eps_q is not None:
        kwargs["eps_q"] = args.eps_q
    if args.eps_r is not None:
        kwargs["eps_r"] = args.eps_r
    if args.trace_inner:
        kwargs["trace_inner"] = True
    return GNControls(**kwargs)


def cmd_run(args):
    problem = _load_or_generate(args)
    variants = DEFAULT_VARIANTS if args.matrix else tuple(args.variant)
    grid = ExperimentGrid(variants=variants)
    controls = _controls_from(args)
    store = run_matrix(problem, grid, controls,
                       progress=lambda name: print(f"running {name} ..."),
                       with_reference=not args.no_reference)
    out_dir = Path(args.out_dir)
    save_store(store, out_dir)
    if math.isfinite(store.J_star):
        print(f"J(x0) = {store.J0:.6g}   J* = {store.J_star:.6g}")
    for name in variants:
        if name in store.summaries:
            s = store.summaries[name]
            print(f"{name:14s} {s.status:20s} J = {s.final_J:<12.6g} "
                  f"outer {s.n_outer:2d}  inner {s.n_inner_total:4d}")
        else:
            print(f"{name:14s} FAILED: {store.errors[name]}")
    if not args.no_figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        for name, trace in store.traces.items():
            path = fig_dir / f"{name}.png"
            _render_convergence(trace, path)
            print(f"figure {path}")
    print(f"results stored in {out_dir}")
    return 0


def _grid_from(args, store, need_rho=False):
    base = ExperimentGrid()
    return ExperimentGrid(
        c_dinv_values=(tuple(args.c_dinv) if args.c_dinv is not None
                       else base.c_dinv_values),
        rho_values=(tuple(args.rho) if need_rho and args.rho is not None
                    else base.rho_values),
        p_values=tuple(args.p) if args.p is not None else base.p_values,
        modes=tuple(args.mode) if args.mode is not None else base.modes,
        variants=tuple(sorted(store.summaries)))


def cmd_cost(args):
    store = load_store(args.results)
    if not store.summaries:
        raise ParameterError(f"no stored runs in {args.results}")
    grid = _grid_from(args, store)
    rows = cost_rows(store, grid)
    out = Path(args.out) if args.out else Path(args.results) / "costs.csv"
    costs_to_csv(rows, out)
    cheapest = min(rows, key=lambda r: r["cost"])
    print(f"wrote {len(rows)} priced runs to {out}")
    print(f"cheapest: {cheapest['variant']} at p={cheapest['p']}, "
          f"c_dinv={cheapest['c_dinv']}, {cheapest['mode']}: "
          f"{cheapest['cost']:.6g}")
    return 0


def cmd_map(args):
    store = load_store(args.results)
    if not store.summaries:
        raise ParameterError(f"no stored runs in {args.results}")
    grid = _grid_from(args, store, need_rho=True)
    cells = best_method_map(store, grid)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.results)
    out_dir.mkdir(parents=True, exist_ok=True)
    map_to_csv(cells, out_dir / "map.csv")
    cells_to_json(cells, out_dir / "map.json")
    written = [out_dir / "map.csv", out_dir / "map.json"]
    if not args.no_figures:
        written += _render_map_figures(cells, out_dir)
    counts = {}
    for cell in cells:
        key = cell.winner or "none"
        counts[key] = counts.get(key, 0) + 1
    for name, count in sorted(counts.items(), key=lambda kv: -kv[1]):
        print(f"{name:14s} wins {count:4d} cells")
    for path in written:
        print(f"wrote {path}")
    return 0


# ------------------------------------------------------------- figures


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _render_convergence(trace, path):
    """Objective (solid) and quadratic model (dashed) against the
    cumulative inner-iteration count, outer boundaries dotted."""
    plt = _pyplot()
    steps = list(range(len(trace.rows)))
    J = [row.J for row in trace.rows]
    q = [row.q for row in trace.rows]
    boundaries = [i for i, row in enumerate(trace.rows) if row.inner == 0]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    finite = [v for v in J + q if math.isfinite(v)]
    if finite and min(finite) > 0.0:
        ax.set_yscale("log")
    ax.plot(steps, J, "-", color="tab:blue", label="J")
    ax.plot(steps, q, "--", color="tab:orange", label="quadratic model")
    for b in boundaries[1:]:
        ax.axvline(b, color="0.8", linestyle=":", linewidth=0.8)
    ax.set_xlabel("cumulative inner iteration")
    ax.set_ylabel("objective")
    ax.set_title(trace.variant)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _render_map_figures(cells, out_dir):
    """One winner map and one min-cost heatmap per (mode, p)."""
    plt = _pyplot()
    from matplotlib.colors import LogNorm
    from matplotlib.patches import Patch

    groups = {}
    for cell in cells:
        groups.setdefault((cell.mode, cell.p), []).append(cell)
    winners = sorted({c.winner for c in cells if c.winner})
    cmap = plt.get_cmap("tab20")
    color_of = {name: cmap(i % 20) for i, name in enumerate(winners)}

    written = []
    for (mode, p), group in sorted(groups.items()):
        xs = sorted({c.c_dinv for c in group})
        ys = sorted({c.rho for c in group})
        xi = {v: i for i, v in enumerate(xs)}
        yi = {v: i for i, v in enumerate(ys)}
        rgba = np.ones((len(ys), len(xs), 4))
        costs = np.full((len(ys), len(xs)), np.nan)
        for c in group:
            if c.winner:
                rgba[yi[c.rho], xi[c.c_dinv]] = color_of[c.winner]
            costs[yi[c.rho], xi[c.c_dinv]] = c.min_cost

        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.imshow(rgba, origin="lower", aspect="auto",
                  interpolation="nearest")
        _label_axes(ax, xs, ys)
        present = sorted({c.winner for c in group if c.winner})
        handles = [Patch(facecolor=color_of[n], label=n) for n in present]
        if any(not c.winner for c in group):
            handles.append(Patch(facecolor="white", edgecolor="0.6",
                                 label="none"))
        ax.legend(handles=handles, loc="center left",
                  bbox_to_anchor=(1.02, 0.5), fontsize=8)
        ax.set_title(f"best variant, {mode}, p={p}")
        fig.tight_layout()
        path = out_dir / f"map_{mode}_p{p}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(6.4, 4.5))
        finite = costs[np.isfinite(costs)]
        norm = (LogNorm(vmin=finite.min(), vmax=finite.max())
                if finite.size and finite.min() > 0.0 else None)
        im = ax.imshow(costs, origin="lower", aspect="auto",
                       interpolation="nearest", cmap="viridis", norm=norm)
        _label_axes(ax, xs, ys)
        fig.colorbar(im, ax=ax, label="min cost")
        ax.set_title(f"minimum cost, {mode}, p={p}")
        fig.tight_layout()
        path = out_dir / f"surface_{mode}_p{p}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def _label_axes(ax, xs, ys):
    ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
    ax.set_yticks(range(len(ys)), [f"{v:.2g}" for v in ys])
    ax.set_xlabel("inverse state-weight application cost")
    ax.set_ylabel("required gap reduction")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, NumericalError, IntegrityError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
