import math

import numpy as np
import pytest

from wc4dvar.errors import LinesearchError, ParameterError
from wc4dvar.gaussnewton import (GNControls, VariantSpec,
                                 backtracking_linesearch, run_variant,
                                 sufficient_quadratic_decrease,
                                 theta_schedule)


# ------------------------------------------------------------- naming


def test_variant_parse_fields():
    v = VariantSpec.parse("SAQ25-M-0")
    assert v.formulation == "SA"
    assert v.check_period == 25
    assert v.preconditioner == "M"
    assert v.model_approx == "zero"
    assert v.name == "SAQ25-M-0"


def test_variant_parse_defaults():
    v = VariantSpec.parse("SAQ15")
    assert v.preconditioner == "n"
    assert v.model_approx is None
    assert v.name == "SAQ15-n"
    assert VariantSpec.parse("FOQ1-D").name == "FOQ1-D"
    assert VariantSpec.parse("STQ50-S-M").model_approx == "exact"


@pytest.mark.parametrize("bad", [
    "XXQ1-M-0",     # unknown formulation
    "SAQ1-Z-0",     # unknown preconditioner letter
    "STQ1-M-0",     # saddle-only preconditioner on the state solver
    "FOQ1-S",       # state-only preconditioner on the forcing solver
    "SAQ1-M",       # saddle preconditioner without a surrogate choice
    "FOQ1-D-0",     # forcing preconditioner takes no surrogate
    "SAQ1-n-0",     # unpreconditioned takes no surrogate
    "STQ0-S-0",     # the residual rule exists only for the saddle solver
    "FOQ0-D",
])
def test_variant_rejects_illegal_names(bad):
    with pytest.raises(ParameterError):
        VariantSpec.parse(bad)


def test_variant_q0_saddle_is_legal():
    v = VariantSpec.parse("SAQ0-B-0")
    assert v.check_period == 0


# ------------------------------------------------- inner stopping rule


def test_theta_schedule_worked_examples():
    # decrease target for q0 = 8, budget 50: (8/2)^(50/j) - 1
    assert theta_schedule(8.0, 50, 25) == pytest.approx(15.0)
    assert theta_schedule(8.0, 50, 50) == pytest.approx(3.0)
    assert theta_schedule(8.0, 50, 200) == pytest.approx(3.0)
    assert theta_schedule(2.0, 50, 10) == 0.0
    assert theta_schedule(1.0, 50, 10) == 0.0  # clamped at zero


def test_theta_schedule_overflow_guard():
    assert theta_schedule(1e300, 600, 1) == math.inf


def test_sufficient_quadratic_decrease_rule():
    # gradient term dominates when theta is small
    assert sufficient_quadratic_decrease(0.5, 1.0, 0.01, 0.0)
    assert not sufficient_quadratic_decrease(0.005, 1.0, 0.01, 0.0)
    # the min(1, |g|^2) cap keeps the target sane for huge gradients
    assert sufficient_quadratic_decrease(0.011, 1e6, 0.01, 0.0)
    # theta takes over when it is the larger requirement
    assert not sufficient_quadratic_decrease(0.5, 1.0, 0.01, 2.0)
    assert sufficient_quadratic_decrease(2.5, 1.0, 0.01, 2.0)


# ---------------------------------------------------------- linesearch


def controls(**kw):
    return GNControls(**kw)


def test_linesearch_accepts_unit_newton_step():
    x = np.array([1.0, -2.0])

    def objective(z):
        return 0.5 * float(z @ z)

    dx = -x
    alpha, J, backtracks = backtracking_linesearch(
        objective, x, objective(x), float(x @ dx) * -1.0 * -1.0, dx,
        controls())
    assert alpha == 1.0
    assert backtracks == 0
    assert J == 0.0


def test_linesearch_backtracks_on_overlong_step():
    x = np.array([1.0])

    def objective(z):
        return float(z[0] ** 2)

    dx = np.array([-100.0])
    gdx = 2.0 * x[0] * dx[0]
    alpha, J, backtracks = backtracking_linesearch(
        objective, x, objective(x), gdx, dx, controls())
    assert backtracks > 0
    assert J <= objective(x) + 1e-4 * alpha * gdx


def test_linesearch_rejects_ascent_direction():
    x = np.array([1.0])
    with pytest.raises(LinesearchError):
        backtracking_linesearch(lambda z: float(z[0] ** 2), x, 1.0,
                                +2.0, np.array([1.0]), controls())


def test_linesearch_budget_exhaustion_keeps_plain_decrease():
    # Armijo can never hold here (flat objective with a kink), but the
    # plain-decrease fallback must keep the best trial seen
    x = np.array([0.0])

    def objective(z):
        return max(-1e-30, -abs(float(z[0])) * 1e-12)

    dx = np.array([1.0])
    alpha, J, backtracks = backtracking_linesearch(
        objective, x, 0.0, -1e-12, dx, controls(max_backtracks=5))
    assert backtracks == 5
    assert alpha == 0.5 ** 5
    assert J < 0.0


# --------------------------------------------------------- outer loop


@pytest.fixture(scope="module")
def runs(small_problem):
    out = {}
    for name in ("SAQ1-M-0", "STQ1-S-M", "FOQ1-D", "SAQ0-B-0", "STQ15-S-0"):
        out[name] = run_variant(small_problem, name,
                                GNControls(max_outer=4, n_inner=30,
                                           inner_cap=120))
    return out


def test_globalized_variants_decrease_monotonically(runs):
    for name, trace in runs.items():
        if name.startswith("SAQ0"):
            continue
        hist = trace.objective_history()
        assert np.all(np.diff(hist) <= 1e-12 * hist[0]), name


def test_accepted_steps_are_descent(runs):
    for name, trace in runs.items():
        if name.startswith("SAQ0"):
            continue
        for rec in trace.outer:
            if rec.alpha > 0.0:
                assert rec.step_dot_grad < 0.0, name


def test_accepted_steps_satisfy_gradient_related_bound(runs):
    # a posteriori: accepted directions carry at least the guaranteed
    # fraction of steepest-descent decrease, with kappa_g the largest
    # gradient norm seen over the run (clamped below by one)
    eps_q = 0.01
    for name, trace in runs.items():
        if name.startswith("SAQ0"):
            continue
        kappa_g = max(1.0, max(rec.grad_norm for rec in trace.outer))
        for rec in trace.outer:
            if rec.alpha > 0.0:
                bound = -eps_q * kappa_g ** -2 * rec.grad_norm ** 2
                assert rec.step_dot_grad <= bound, name


def test_full_accuracy_probe_step_matches_exact_schur_step(small_problem):
    # with the iteration budget lifted and the stop forced to full
    # accuracy, the probe-rule variant and the exact-preconditioner
    # state variant solve the same linear system: one outer step each
    # must land on the same iterate
    ctl = GNControls(max_outer=1, n_inner=2000, inner_cap=2000,
                     force_full_accuracy=True)
    sa = run_variant(small_problem, "SAQ1-M-M", ctl)
    st = run_variant(small_problem, "STQ1-S-M", ctl)
    step = np.linalg.norm(st.final_x - small_problem.first_guess.ravel())
    gap = np.linalg.norm(sa.final_x - st.final_x)
    assert gap <= 1e-6 * max(1.0, step)


def test_quadratic_model_consistency(runs):
    for name, trace in runs.items():
        for rec in trace.outer:
            assert abs(rec.quadratic_at_zero - rec.J) <= 1e-10 * max(1.0, rec.J)
            assert rec.gradient_consistency <= 1e-10


def test_residual_rule_never_evaluates_quadratic(runs):
    trace = runs["SAQ0-B-0"]
    assert trace.n_q_total == 0
    for rec in trace.outer:
        assert rec.alpha == 1.0  # unit step, no globalization


def test_probe_rule_counts_quadratic_evaluations(runs):
    assert runs["SAQ1-M-0"].n_q_total >= runs["SAQ1-M-0"].n_outer
    # period 15 probes at most every 15th inner iteration
    st15 = runs["STQ15-S-0"]
    assert st15.n_q_total <= max(1, st15.n_inner_total // 15 + st15.n_outer)


def test_run_accepts_spec_object(small_problem):
    trace = run_variant(small_problem, VariantSpec.parse("FOQ1-D"),
                        GNControls(max_outer=1))
    assert trace.variant == "FOQ1-D"
    assert trace.n_outer == 1


def test_gradient_tolerance_stops_outer_loop(small_problem):
    trace = run_variant(small_problem, "STQ1-S-M",
                        GNControls(max_outer=30, force_full_accuracy=True,
                                   inner_cap=200, gradient_tolerance=1e-6))
    assert trace.status == "gradient_converged"
    assert trace.final_grad_norm <= 1e-6


def test_objective_stall_stops_outer_loop(small_problem):
    trace = run_variant(small_problem, "STQ1-S-M",
                        GNControls(max_outer=30, inner_cap=200,
                                   rel_objective_tolerance=1e-9))
    assert trace.status == "objective_stalled"


def test_trace_rows_off_by_default(small_problem):
    trace = run_variant(small_problem, "SAQ1-M-0", GNControls(max_outer=2))
    outer_starts = [r for r in trace.rows if r.inner == 0]
    assert len(outer_starts) == trace.n_outer
    # inner rows appear only per-probe unless trace_inner is on
    assert all(math.isnan(r.J) or r.inner == 0 for r in trace.rows)


def test_trace_inner_records_every_iteration(small_problem):
    trace = run_variant(small_problem, "SAQ1-M-0",
                        GNControls(max_outer=2, trace_inner=True))
    first = [r for r in trace.rows if r.outer == 0]
    assert len(first) == trace.outer[0].inner_iterations + 1
    for row in first:
        assert math.isfinite(row.q) or row.inner == 0
        assert math.isfinite(row.J)


def test_op_counts_accumulate(small_problem):
    trace = run_variant(small_problem, "SAQ1-M-0", GNControls(max_outer=2))
    ops = trace.op_counts
    assert ops["model"] >= 2
    assert ops["L"] > 0 and ops["LT"] > 0
    assert ops["Dinv"] > 0 and ops["Rinv"] > 0
    assert ops["Linv"] == 0  # saddle solver never inverts the model chain


def test_rejects_bad_controls(small_problem):
    with pytest.raises(ParameterError):
        run_variant(small_problem, "SAQ1-M-0", GNControls(n_inner=0))
