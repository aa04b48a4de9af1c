"""Variant-matrix experiments, reliability maps and result persistence.

The experiment machinery is split in two phases.  Running a variant
records an execution trace (iteration counts, objective values, operator
applications); costing happens afterwards, so one trace can be priced at
every (c_dinv, p, mode) gridpoint without re-running anything.  The
exception is runs with an approximate D inverse, whose iterates really
do change; those are re-run per configuration by the caller.

Stored layout of a results directory:

    manifest.json      run config, reference values, per-variant summary
    traces/<name>.csv  one row per recorded iteration, schema-tagged
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .costmodel import CostParams, variant_cost
from .errors import NumericalError, ParameterError
from .formulations import OP_KEYS
from .gaussnewton import GNControls, VariantSpec, run_variant

MANIFEST_SCHEMA = "wc4dvar-manifest-v1"
TRACE_SCHEMA = "wc4dvar-trace-v1"
MAP_SCHEMA = "wc4dvar-map-v1"

# every period from the study, crossed with the legal preconditioner
# and surrogate choices of its formulation
DEFAULT_VARIANTS = tuple(
    name
    for period in (1, 15, 25, 50)
    for name in (
        f"SAQ{period}-n", f"SAQ{period}-M-0", f"SAQ{period}-M-I",
        f"SAQ{period}-M-M",
        f"STQ{period}-n", f"STQ{period}-S-0", f"STQ{period}-S-I",
        f"STQ{period}-S-M",
        f"FOQ{period}-D",
    )
)


@dataclass(frozen=True)
class ExperimentGrid:
    """Cross product of cost-model settings for map construction."""

    c_dinv_values: tuple = (0.5, 1.0, 2.0, 5.0, 10.0)
    rho_values: tuple = tuple(float(r) for r in np.logspace(-3.0, -1.0, 7))
    p_values: tuple = (1, 15, 25, 50)
    modes: tuple = ("fully_mpi",)
    variants: tuple = DEFAULT_VARIANTS

    def __post_init__(self):
        for name, values in (("c_dinv_values", self.c_dinv_values),
                             ("rho_values", self.rho_values),
                             ("p_values", self.p_values),
                             ("modes", self.modes),
                             ("variants", self.variants)):
            if not values:
                raise ParameterError(f"{name} must be nonempty")
        if any(not 0.0 < r < 1.0 for r in self.rho_values):
            raise ParameterError("reliability factors must lie in (0, 1)")
        for v in self.variants:
            VariantSpec.parse(v)


@dataclass
class RunSummary:
    """Aggregate counts of one run; all the cost model needs."""

    variant: str
    status: str
    n_outer: int
    n_inner_total: int
    n_q_total: int
    final_J: float
    final_grad_norm: float

    @classmethod
    def from_trace(cls, trace):
        return cls(variant=trace.variant, status=trace.status,
                   n_outer=trace.n_outer,
                   n_inner_total=trace.n_inner_total,
                   n_q_total=trace.n_q_total,
                   final_J=trace.final_J,
                   final_grad_norm=trace.final_grad_norm)


@dataclass
class ResultsStore:
    """Everything one matrix run produced."""

    problem_manifest: dict
    controls: dict
    summaries: dict = field(default_factory=dict)   # name -> RunSummary
    traces: dict = field(default_factory=dict)      # name -> RunTrace
    errors: dict = field(default_factory=dict)      # name -> message
    J0: float = math.nan
    J_star: float = math.nan

    @property
    def n_sw(self):
        return int(self.problem_manifest["config"]["nsub"])


@dataclass(frozen=True)
class MapCell:
    mode: str
    p: int
    c_dinv: float
    rho: float
    winner: str          # None when nothing passed
    min_cost: float      # nan when nothing passed
    passed: tuple


def reference_optimum(problem, controls=None):
    """Minimize as far as floating point allows; returns (x, J, trace).

    Uses the exactly preconditioned state solver with full-accuracy
    inner solves, stopping on a tiny gradient or a stagnating objective.
    """
    controls = controls or GNControls(
        max_outer=50, force_full_accuracy=True, inner_cap=600,
        gradient_tolerance=1e-10, rel_objective_tolerance=1e-12)
    trace = run_variant(problem, "STQ1-S-M", controls)
    if trace.status not in ("gradient_converged", "objective_stalled"):
        raise NumericalError(
            f"reference run failed to converge: status {trace.status!r}, "
            f"gradient norm {trace.final_grad_norm:.3e}")
    return trace.final_x, trace.final_J, trace


def run_matrix(problem, grid=None, controls=None, progress=None,
               with_reference=True):
    """Run every variant of the grid once; failures are recorded, not raised.

    Traces are independent of the cost model, so the returned store can
    be priced at any gridpoint afterwards.  (Runs with an approximate
    D inverse are the exception; re-run those per configuration.)
    """
    grid = grid or ExperimentGrid()
    controls = controls or GNControls()
    store = ResultsStore(problem_manifest=problem.to_manifest(),
                         controls=_controls_dict(controls))
    if with_reference:
        _, J_star, ref_trace = reference_optimum(problem)
        store.J_star = J_star
        store.J0 = ref_trace.outer[0].J
    for name in grid.variants:
        if progress is not None:
            progress(name)
        try:
            trace = run_variant(problem, name, controls)
        except NumericalError as exc:
            store.errors[name] = str(exc)
            continue
        store.traces[name] = trace
        store.summaries[name] = RunSummary.from_trace(trace)
        if not math.isfinite(store.J0) and trace.outer:
            store.J0 = trace.outer[0].J
    return store


def passes_reliability(final_J, J0, J_star, rho):
    """Keep a run whose remaining optimality gap is at most rho of the
    initial one."""
    return final_J - J_star <= rho * (J0 - J_star)


def select_winner(costs, passed):
    """Least-cost member of passed; ties break on the name.

    The argmin is invariant under any uniform positive rescaling of
    the costs.  Returns (None, nan) when nothing passed.
    """
    if not passed:
        return None, math.nan
    winner = min(passed, key=lambda n: (costs[n], n))
    return winner, costs[winner]


def best_method_map(store, grid=None, J0=None, J_star=None):
    """Cheapest reliable variant per gridpoint.

    Ties on cost break lexicographically on the variant name.  Cells
    where no variant passes the reliability filter keep an empty winner
    and a nan cost.
    """
    grid = grid or ExperimentGrid()
    J0 = store.J0 if J0 is None else J0
    J_star = store.J_star if J_star is None else J_star
    if not (math.isfinite(J0) and math.isfinite(J_star)):
        raise ParameterError("map construction needs J0 and J_star")
    names = [n for n in grid.variants if n in store.summaries]
    cells = []
    for mode in grid.modes:
        for p in grid.p_values:
            for c_dinv in grid.c_dinv_values:
                params = CostParams(n_sw=store.n_sw, p=p, c_dinv=c_dinv,
                                    mode=mode)
                costs = {n: variant_cost(store.summaries[n], n, params)
                         for n in names}
                for rho in grid.rho_values:
                    passed = tuple(
                        n for n in names
                        if passes_reliability(store.summaries[n].final_J,
                                              J0, J_star, rho))
                    winner, min_cost = select_winner(costs, passed)
                    cells.append(MapCell(mode, p, c_dinv, rho, winner,
                                         min_cost, passed))
    return cells


def cost_rows(store, grid=None):
    """Price every stored run at every gridpoint of the cost grid."""
    grid = grid or ExperimentGrid()
    rows = []
    for mode in grid.modes:
        for p in grid.p_values:
            for c_dinv in grid.c_dinv_values:
                params = CostParams(n_sw=store.n_sw, p=p, c_dinv=c_dinv,
                                    mode=mode)
                for name, summary in store.summaries.items():
                    rows.append({
                        "variant": name, "p": p, "c_dinv": c_dinv,
                        "mode": mode,
                        "cost": variant_cost(summary, name, params),
                    })
    return rows


# ---------------------------------------------------------- persistence


def _controls_dict(controls):
    out = {}
    for key, value in vars(controls).items():
        out[key] = value
    return out


def trace_to_csv(trace, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRACE_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["outer", "inner", "J", "q_st", "residual_norm"]
                        + [f"ops_{k}" for k in OP_KEYS])
        for row in trace.rows:
            writer.writerow([row.outer, row.inner, repr(float(row.J)),
                             repr(float(row.q)), repr(float(row.residual))]
                            + [int(c) for c in row.ops])


def read_trace_csv(path):
    """Rows of a stored trace as a list of dicts with float fields."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {TRACE_SCHEMA}":
            raise ParameterError(f"unrecognized trace file {path}")
        rows = []
        for record in csv.DictReader(fh):
            rows.append({k: (int(v) if k in ("outer", "inner")
                             or k.startswith("ops_") else float(v))
                         for k, v in record.items()})
    return rows


def save_store(store, out_dir):
    out_dir = _ensure_dir(out_dir)
    (out_dir / "traces").mkdir(exist_ok=True)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "problem": store.problem_manifest,
        "controls": store.controls,
        "J0": store.J0,
        "J_star": store.J_star,
        "runs": {name: vars(summary)
                 for name, summary in sorted(store.summaries.items())},
        "errors": dict(sorted(store.errors.items())),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for name, trace in store.traces.items():
        trace_to_csv(trace, out_dir / "traces" / f"{name}.csv")
    return out_dir / "manifest.json"


def load_store(in_dir):
    """Rebuild a costing-ready store from a results directory.

    Traces are not loaded back; the summaries carry everything the
    cost model and map construction need.
    """
    in_dir = Path(in_dir)
    with open(in_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ParameterError(f"unrecognized manifest in {in_dir}")
    store = ResultsStore(problem_manifest=manifest["problem"],
                         controls=manifest["controls"],
                         J0=manifest["J0"], J_star=manifest["J_star"],
                         errors=manifest.get("errors", {}))
    for name, raw in manifest["runs"].items():
        store.summaries[name] = RunSummary(**raw)
    return store


def map_to_csv(cells, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {MAP_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["c_dinv", "rho", "p", "mode", "winner", "min_cost"])
        for cell in cells:
            writer.writerow([cell.c_dinv, repr(float(cell.rho)), cell.p,
                             cell.mode,
                             cell.winner if cell.winner else "none",
                             "" if math.isnan(cell.min_cost)
                             else repr(float(cell.min_cost))])


def cells_to_json(cells, path):
    payload = {
        "schema": MAP_SCHEMA,
        "cells": [{
            "mode": c.mode, "p": c.p, "c_dinv": c.c_dinv, "rho": c.rho,
            "winner": c.winner,
            "min_cost": None if math.isnan(c.min_cost) else c.min_cost,
            "passed": list(c.passed),
        } for c in cells],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def costs_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {MAP_SCHEMA.replace('map', 'costs')}\n")
        writer = csv.DictWriter(fh, ["variant", "p", "c_dinv", "mode",
                                     "cost"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _ensure_dir(p):
    p = Path(p)
    p.mkdir(parents=True, exist_ok=True)
    return p
