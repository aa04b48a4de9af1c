"""Figure construction from wc4dvar result files.

The solver package writes schema-tagged CSV files (iteration traces and
winner maps).  Everything here consumes those files and nothing else:
no imports from the solver, no recomputation of its numbers.  Outputs
are deterministic for fixed inputs so regenerated figures diff clean.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_SCHEMA = "wc4dvar-trace-v1"
MAP_SCHEMA = "wc4dvar-map-v1"

KINDS = ("convergence", "cost_convergence", "map", "surface")


class PlotInputError(ValueError):
    """Input file missing, malformed, or ambiguous for the figure."""


@dataclass
class FigureSpec:
    """What to draw, from which files, to which image."""

    kind: str
    inputs: tuple
    output: str
    x_scale: str = "linear"
    y_scale: str = "log"
    optimum: float | None = None
    # map/surface only: which grid slice when the file holds several
    mode: str | None = None
    p: int | None = None
    # cost_convergence only: operation-count column weights
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotInputError(f"unknown figure kind {self.kind!r}")
        self.inputs = tuple(str(p) for p in self.inputs)
        if not self.inputs:
            raise PlotInputError("no input files given")
        for p in self.inputs:
            if not Path(p).is_file():
                raise PlotInputError(f"input file not found: {p}")
        for scale in (self.x_scale, self.y_scale):
            if scale not in ("linear", "log"):
                raise PlotInputError(f"unknown axis scale {scale!r}")
        self.output = str(self.output)


def _check_schema(fh, path, expected):
    first = fh.readline().strip()
    if first != f"# schema: {expected}":
        raise PlotInputError(f"{path}: expected {expected}, got {first!r}")


def read_trace(path):
    """Rows of a solver trace file as dicts of ints and floats."""
    with open(path, newline="") as fh:
        _check_schema(fh, path, TRACE_SCHEMA)
        rows = []
        for record in csv.DictReader(fh):
            rows.append({k: (int(v) if k in ("outer", "inner")
                             or k.startswith("ops_") else float(v))
                         for k, v in record.items()})
    return rows


def read_map(path):
    """Winner-map rows; empty cells come back as winner None."""
    with open(path, newline="") as fh:
        _check_schema(fh, path, MAP_SCHEMA)
        rows = []
        for rec in csv.DictReader(fh):
            rows.append({
                "c_dinv": float(rec["c_dinv"]),
                "rho": float(rec["rho"]),
                "p": int(rec["p"]),
                "mode": rec["mode"],
                "winner": None if rec["winner"] == "none" else rec["winner"],
                "min_cost": math.nan if rec["min_cost"] == ""
                else float(rec["min_cost"]),
            })
    return rows


def variant_color(name):
    """Stable RGB for a variant name, identical across processes."""
    digest = hashlib.md5(name.encode()).digest()
    hue = digest[0] / 255.0
    sat = 0.55 + 0.35 * digest[1] / 255.0
    val = 0.65 + 0.25 * digest[2] / 255.0
    import colorsys
    return colorsys.hsv_to_rgb(hue, sat, val)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "wc4dvar"
    import matplotlib.pyplot as plt
    return plt


def _save(fig, plt, output):
    out = Path(output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    if out.suffix == ".svg":
        fig.savefig(out, metadata={"Date": None})
    else:
        fig.savefig(out)
    plt.close(fig)
    return str(out)


def _trace_series(spec):
    series = []
    for path in spec.inputs:
        rows = read_trace(path)
        if not rows:
            raise PlotInputError(f"{path}: trace has no rows")
        series.append((Path(path).stem, rows))
    return series


def _xvalues(spec, rows):
    if spec.kind == "convergence":
        return np.arange(len(rows), dtype=float)
    keys = [k for k in rows[0] if k.startswith("ops_")]
    weights = spec.weights or {"model": 1.0}
    for name in weights:
        if f"ops_{name}" not in keys:
            raise PlotInputError(f"no operation column ops_{name}")
    # counters in the trace are cumulative, so the weighted sum is the
    # running cost directly
    return np.array([sum(w * row[f"ops_{name}"]
                         for name, w in weights.items()) for row in rows])


def convergence_figure(spec):
    plt = _pyplot()
    series = _trace_series(spec)
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    for label, rows in series:
        color = variant_color(label)
        x = _xvalues(spec, rows)
        J = np.array([row["J"] for row in rows])
        q = np.array([row["q_st"] for row in rows])
        ax.plot(x, J, color=color, linestyle="-", linewidth=1.4,
                label=f"{label} J")
        finite = np.isfinite(q)
        if finite.any():
            ax.plot(x[finite], q[finite], color=color, linestyle="--",
                    linewidth=1.1, label=f"{label} q")
        bounds = [x[i] for i in range(1, len(rows))
                  if rows[i]["outer"] != rows[i - 1]["outer"]]
        for xb in bounds:
            ax.axvline(xb, color=color, linestyle=":", linewidth=0.6,
                       alpha=0.35)
    if spec.optimum is not None:
        ax.axhline(spec.optimum, color="0.3", linestyle="-.",
                   linewidth=0.9, label="optimum")
    ax.set_xscale(spec.x_scale)
    ax.set_yscale(spec.y_scale)
    ax.set_xlabel("inner iteration" if spec.kind == "convergence"
                  else "cumulative cost")
    ax.set_ylabel("objective / quadratic model")
    ax.legend(fontsize=8, ncols=2)
    fig.tight_layout()
    return fig, plt


def _map_slice(spec):
    rows = []
    for path in spec.inputs:
        rows.extend(read_map(path))
    if not rows:
        raise PlotInputError("map file has no rows")
    slices = sorted({(r["mode"], r["p"]) for r in rows})
    mode, p = spec.mode, spec.p
    if mode is None and p is None and len(slices) == 1:
        mode, p = slices[0]
    if mode is None or p is None:
        raise PlotInputError(
            f"map holds slices {slices}; pick one with mode= and p=")
    picked = [r for r in rows if r["mode"] == mode and r["p"] == p]
    if not picked:
        raise PlotInputError(f"no rows for mode={mode!r} p={p}")
    return picked, mode, p


def map_figure(spec):
    plt = _pyplot()
    from matplotlib.patches import Patch
    rows, mode, p = _map_slice(spec)
    cs = sorted({r["c_dinv"] for r in rows})
    rhos = sorted({r["rho"] for r in rows})
    grid = np.ones((len(rhos), len(cs), 3))
    winners = {}
    for r in rows:
        i = rhos.index(r["rho"])
        j = cs.index(r["c_dinv"])
        if r["winner"] is not None:
            grid[i, j] = variant_color(r["winner"])
            winners[r["winner"]] = grid[i, j].copy()
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    ax.imshow(grid, origin="lower", aspect="auto",
              interpolation="nearest")
    ax.set_xticks(range(len(cs)), [f"{c:g}" for c in cs])
    ax.set_yticks(range(len(rhos)), [f"{r:.1e}" for r in rhos])
    ax.set_xlabel("state-weight inverse cost")
    ax.set_ylabel("reliability factor")
    ax.set_title(f"cheapest reliable variant, {mode}, p={p}")
    handles = [Patch(facecolor=c, label=name)
               for name, c in sorted(winners.items())]
    if handles:
        ax.legend(handles=handles, fontsize=7, loc="center left",
                  bbox_to_anchor=(1.02, 0.5))
    fig.tight_layout()
    return fig, plt


def surface_figure(spec):
    plt = _pyplot()
    rows, mode, p = _map_slice(spec)
    cs = sorted({r["c_dinv"] for r in rows})
    rhos = sorted({r["rho"] for r in rows})
    z = np.full((len(rhos), len(cs)), np.nan)
    for r in rows:
        z[rhos.index(r["rho"]), cs.index(r["c_dinv"])] = r["min_cost"]
    fig = plt.figure(figsize=(6.8, 5.0))
    ax = fig.add_subplot(projection="3d")
    cgrid, rgrid = np.meshgrid(cs, np.log10(rhos))
    ax.plot_surface(cgrid, rgrid, np.log10(z), cmap="viridis",
                    edgecolor="0.4", linewidth=0.3)
    ax.set_xlabel("state-weight inverse cost")
    ax.set_ylabel("log10 reliability factor")
    ax.set_zlabel("log10 minimum cost")
    ax.set_title(f"minimum reliable cost, {mode}, p={p}")
    return fig, plt


_BUILDERS = {
    "convergence": convergence_figure,
    "cost_convergence": convergence_figure,
    "map": map_figure,
    "surface": surface_figure,
}


def render(spec):
    """Build the figure for `spec` and write it; returns the path."""
    fig, plt = _BUILDERS[spec.kind](spec)
    return _save(fig, plt, spec.output)
