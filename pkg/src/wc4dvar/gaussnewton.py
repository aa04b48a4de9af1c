"""Outer Gauss-Newton loop over the three inner solution strategies.

A variant name encodes everything about one solver configuration:

    <formulation>Q<period>[-<preconditioner>[-<approximation>]]

The formulation is SA (saddle system via GMRES), ST (state normal
equations via FOM) or FO (forcing normal equations via FOM).  The
period is how many inner iterations pass between evaluations of the
quadratic-decrease stopping rule; period 0 (saddle only) disables that
rule and stops on the preconditioned relative residual instead.  The
preconditioner letter is one of M/T/B (saddle), S (state), D (forcing)
or n for none, and the trailing letter picks the surrogate model blocks
inside it: 0 (zero), I (identity) or M (exact).

Examples: SAQ15-M-0, SAQ0-B-I, STQ1-S-M, FOQ25-D, SAQ50-n.

Globalization is a backtracking linesearch on the true objective for
every variant with period >= 1; period 0 takes the unit step, which is
exactly the behaviour whose failure modes the residual-rule experiments
demonstrate.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import LinesearchError, ParameterError
from .formulations import (apply_precond_inverse, apply_schur_inverse,
                           build_subproblem, eval_quadratic, forcing_matvec,
                           forcing_rhs, gradient_from_parts, new_op_counts,
                           quadratic_gradient_parts, saddle_matvec, saddle_rhs,
                           state_matvec, state_rhs, unpack_saddle)
from .krylov import (SolverControls, fom_forcing, fom_left_preconditioned,
                     gmres_left_preconditioned)
from .operators import BlockDiagonalSPD

_VARIANT_RE = re.compile(r"^(SA|ST|FO)Q(\d+)(?:-(n|[MTBSD]))?(?:-([0IM]))?$")

_APPROX_CODE = {"0": "zero", "I": "identity", "M": "exact"}
_CODE_APPROX = {v: k for k, v in _APPROX_CODE.items()}

_LEGAL_PRECONDITIONERS = {"SA": {"M", "T", "B", "n"},
                          "ST": {"S", "n"},
                          "FO": {"D", "n"}}


@dataclass(frozen=True)
class VariantSpec:
    """Parsed solver configuration; see the module docstring."""

    formulation: str
    check_period: int
    preconditioner: str = "n"
    model_approx: str | None = None

    def __post_init__(self):
        if self.formulation not in ("SA", "ST", "FO"):
            raise ParameterError(f"unknown formulation {self.formulation!r}")
        if self.check_period < 0:
            raise ParameterError("check period cannot be negative")
        if self.check_period == 0 and self.formulation != "SA":
            raise ParameterError("the residual-only rule exists for SA alone")
        legal = _LEGAL_PRECONDITIONERS[self.formulation]
        if self.preconditioner not in legal:
            raise ParameterError(
                f"{self.formulation} accepts preconditioners {sorted(legal)}, "
                f"not {self.preconditioner!r}")
        needs_approx = (self.formulation in ("SA", "ST")
                        and self.preconditioner != "n")
        if needs_approx and self.model_approx not in _CODE_APPROX:
            raise ParameterError(
                f"{self.formulation}-{self.preconditioner} needs a model "
                "approximation (zero, identity or exact)")
        if not needs_approx and self.model_approx is not None:
            raise ParameterError(
                "a model approximation only makes sense inside a saddle or "
                "state preconditioner")

    @classmethod
    def parse(cls, name):
        m = _VARIANT_RE.match(name)
        if not m:
            raise ParameterError(f"cannot parse variant name {name!r}")
        form, period, prec, approx = m.groups()
        return cls(formulation=form, check_period=int(period),
                   preconditioner=prec or "n",
                   model_approx=_APPROX_CODE.get(approx) if approx else None)

    @property
    def name(self):
        parts = [f"{self.formulation}Q{self.check_period}", self.preconditioner]
        if self.model_approx is not None:
            parts.append(_CODE_APPROX[self.model_approx])
        return "-".join(parts)


@dataclass
class GNControls:
    """Outer-loop and inner-loop tuning shared by all variants."""

    max_outer: int = 10
    n_inner: int = 50
    eps_r: float = 1e-6
    eps_q: float = 0.01
    inner_cap: int = 600
    full_accuracy_tolerance: float = 1e-12
    gradient_tolerance: float = 1e-10
    rel_objective_tolerance: float = 0.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    force_full_accuracy: bool = False
    trace_inner: bool = False
    dinv_cg: int | None = None


@dataclass
class OuterRecord:
    index: int
    J: float
    grad_norm: float
    inner_iterations: int
    q_evaluations: int
    inner_reason: str
    step_dot_grad: float
    step_norm: float
    alpha: float
    backtracks: int
    J_next: float
    # internal-consistency diagnostics, filled at linearization time
    quadratic_at_zero: float = math.nan
    gradient_consistency: float = math.nan


@dataclass
class InnerRow:
    outer: int
    inner: int
    J: float
    q: float
    residual: float
    ops: tuple


@dataclass
class RunTrace:
    """Everything one variant run produced, ready for storage or costing."""

    variant: str
    outer: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    op_counts: dict = field(default_factory=new_op_counts)
    final_J: float = math.nan
    final_grad_norm: float = math.nan
    final_x: np.ndarray = None
    status: str = ""

    @property
    def n_outer(self):
        return len(self.outer)

    @property
    def n_inner_total(self):
        return sum(rec.inner_iterations for rec in self.outer)

    @property
    def n_q_total(self):
        return sum(rec.q_evaluations for rec in self.outer)

    def objective_history(self):
        hist = [rec.J for rec in self.outer]
        hist.append(self.final_J)
        return np.array(hist)


def theta_schedule(q0, n_inner, j):
    """Decrease target that loosens as the iteration count grows.

    Evaluates (q0/2)^max(1, n_inner/j) - 1, clamped below at zero, with
    an overflow guard for huge exponents.
    """
    if j < 1:
        raise ParameterError("iteration index must be at least 1")
    base = 0.5 * q0
    if base <= 0.0:
        return 0.0
    expo = max(1.0, n_inner / j)
    logv = expo * math.log(base)
    value = math.inf if logv > 700.0 else base ** expo
    return max(value - 1.0, 0.0)


def sufficient_quadratic_decrease(decrease, grad_norm, eps_q, theta):
    """The probe-based inner stopping rule."""
    return decrease >= max(eps_q * min(1.0, grad_norm ** 2), theta)


def backtracking_linesearch(objective, x, J0, step_dot_grad, dx, controls):
    """Armijo backtracking from unit step.

    Exhausting the budget falls back on the last trial that achieved a
    plain decrease; with no such trial the step is rejected (alpha 0).
    Raises LinesearchError on a non-descent direction.
    """
    if step_dot_grad >= 0.0:
        raise LinesearchError("not a descent direction")
    alpha = 1.0
    fallback = None
    for t in range(controls.max_backtracks + 1):
        J_trial = objective(x + alpha * dx)
        if J_trial <= J0 + controls.armijo_c * alpha * step_dot_grad:
            return alpha, J_trial, t
        if J_trial < J0:
            fallback = (alpha, J_trial, t)
        alpha *= controls.backtrack_factor
    if fallback is not None:
        return fallback
    return 0.0, J0, controls.max_backtracks + 1


def _evaluate_J(problem, x, D_op, counts):
    b, d, _ = problem.sweep(x)
    counts["model"] += 1
    counts["obs"] += 1
    counts["Dinv"] += 1
    counts["Rinv"] += 1
    return 0.5 * float(b @ D_op.apply_inverse(b) + d @ problem.R.apply_inverse(d))


def _linearize(problem, x, D_op, counts, model_approx):
    """One outer evaluation: J, gradient and the frozen subproblem."""
    b, d, segments = problem.sweep(x)
    counts["model"] += 1
    counts["obs"] += 1
    L = problem.linearized_model(segments)
    sub = build_subproblem(L, problem.H, D_op, problem.R, b, d, counts,
                           model_approx=model_approx)
    dinv_b, rinv_d = quadratic_gradient_parts(sub)
    J = 0.5 * float(b @ dinv_b + d @ rinv_d)
    g = gradient_from_parts(sub, dinv_b, rinv_d)
    return J, g, sub, dinv_b, rinv_d


def _shadow(sub):
    """Same operators, throwaway counter: for diagnostic-only evaluations."""
    approx = None
    if sub.L_tilde is not None:
        approx = {"zero": "zero", "identity": "identity",
                  "exact": "exact"}[sub.L_tilde.op.kind]
    return build_subproblem(sub.L.op, sub.H.op, sub.D.op, sub.R.op,
                            sub.b, sub.d, new_op_counts(), model_approx=approx)


class _InnerResult:
    def __init__(self):
        self.q_at = {}      # iteration -> quadratic value (absolute)
        self.J_at = {}      # iteration -> nonlinear objective (diagnostic)
        self.ops_at = {}    # iteration -> cumulative op-count tuple
        self.n_q = 0


def _consistency(sub, g):
    """Cross-check the quadratic model against the nonlinear quantities.

    Returns the quadratic's value at zero (which must reproduce J) and
    the relative gap between the solver right-hand side and -g, both
    evaluated on uncounted shadow operators.
    """
    shadow = _shadow(sub)
    q_zero = eval_quadratic(shadow, np.zeros(shadow.s))
    rhs = state_rhs(shadow, *quadratic_gradient_parts(shadow))
    grad_rel = float(np.linalg.norm(g + rhs)
                     / max(np.linalg.norm(g), 1e-300))
    return q_zero, grad_rel


def run_variant(problem, variant, controls=None):
    """Minimize the assimilation objective with one solver variant.

    variant may be a VariantSpec or a name string.  Returns a RunTrace;
    numerical failures inside the inner solvers propagate as exceptions.
    """
    if isinstance(variant, str):
        variant = VariantSpec.parse(variant)
    controls = controls or GNControls()
    if controls.n_inner < 1:
        raise ParameterError("n_inner must be at least 1")

    D_op = problem.D
    if controls.dinv_cg is not None:
        D_op = BlockDiagonalSPD(problem.D.blocks)
        D_op.set_inverse_mode(("cg", controls.dinv_cg))

    trace = RunTrace(variant=variant.name)
    counts = trace.op_counts
    x = problem.first_guess.copy()
    J = math.nan
    gnorm = math.nan
    status = "max_outer"

    for k in range(controls.max_outer):
        J, g, sub, dinv_b, rinv_d = _linearize(problem, x, D_op, counts,
                                               variant.model_approx)
        gnorm = float(np.linalg.norm(g))
        ops_start = tuple(counts.values())
        if gnorm <= controls.gradient_tolerance:
            status = "gradient_converged"
            trace.rows.append(InnerRow(k, 0, J, J, math.nan, ops_start))
            break

        dx, inner, probe_data = _solve_inner(
            problem, variant, controls, sub, g, dinv_b, rinv_d, J, x, D_op,
            counts)

        step_dot_grad = float(g @ dx)
        if variant.check_period == 0:
            alpha, backtracks = 1.0, 0
            x = x + dx
            J_next = _evaluate_J(problem, x, D_op, new_op_counts())
        elif step_dot_grad >= 0.0 or not np.any(dx):
            alpha, backtracks, J_next = 0.0, 0, J
        else:
            alpha, J_next, backtracks = backtracking_linesearch(
                lambda xt: _evaluate_J(problem, xt, D_op, counts),
                x, J, step_dot_grad, dx, controls)
            if alpha > 0.0:
                x = x + alpha * dx
            assert J_next <= J, "globalized step increased the objective"

        q_zero, grad_rel = _consistency(sub, g)
        trace.outer.append(OuterRecord(
            index=k, J=J, grad_norm=gnorm,
            inner_iterations=inner.iterations,
            q_evaluations=probe_data.n_q,
            inner_reason=inner.termination_reason,
            step_dot_grad=step_dot_grad,
            step_norm=float(np.linalg.norm(dx)), alpha=alpha,
            backtracks=backtracks, J_next=J_next,
            quadratic_at_zero=q_zero, gradient_consistency=grad_rel))
        _append_rows(trace, k, J, inner, probe_data, ops_start)

        if (controls.rel_objective_tolerance > 0.0 and
                abs(J - J_next) <= controls.rel_objective_tolerance
                * max(1.0, abs(J))):
            J = J_next
            status = "objective_stalled"
            break
        J = J_next

    trace.final_J = J
    trace.final_grad_norm = gnorm
    trace.final_x = x
    trace.status = status
    return trace


def _append_rows(trace, k, J, inner, probe_data, ops_start):
    res = inner.residual_norms
    trace.rows.append(InnerRow(k, 0, J, J, res[0] if res else math.nan,
                               ops_start))
    q_free = inner.q_values
    last_ops = ops_start
    for j in range(1, inner.iterations + 1):
        if j < len(q_free) and math.isfinite(q_free[j]):
            q_abs = q_free[j] + J
        else:
            q_abs = probe_data.q_at.get(j, math.nan)
        last_ops = probe_data.ops_at.get(j, last_ops)
        trace.rows.append(InnerRow(
            k, j, probe_data.J_at.get(j, math.nan), q_abs,
            res[j] if j < len(res) else math.nan, last_ops))


def _solve_inner(problem, variant, controls, sub, g, dinv_b, rinv_d, J, x,
                 D_op, counts):
    """Dispatch one inner solve; returns (dx, inner_trace, probe_data)."""
    ell = variant.check_period
    gnorm = float(np.linalg.norm(g))
    data = _InnerResult()
    shadow = _shadow(sub) if controls.trace_inner else None

    def snapshot(j):
        data.ops_at[j] = tuple(counts.values())

    def trace_J(j, dx):
        if controls.trace_inner:
            data.J_at[j] = _evaluate_J(problem, x + dx, D_op, new_op_counts())

    if variant.formulation == "SA":
        rhs = saddle_rhs(sub)
        matvec = lambda v: saddle_matvec(sub, v)
        precond = None
        if variant.preconditioner != "n":
            precond = lambda r: apply_precond_inverse(
                sub, variant.preconditioner, r)

        if ell == 0:
            sc = SolverControls(
                max_iterations=controls.n_inner,
                residual_tolerance=controls.eps_r,
                full_accuracy_tolerance=controls.full_accuracy_tolerance,
                check_period=1)
            probe = None
            if controls.trace_inner:
                def probe(j, v):
                    dx = unpack_saddle(v, sub.s, sub.m)[2]
                    data.q_at[j] = eval_quadratic(shadow, dx)
                    trace_J(j, dx)
                    return False
        else:
            sc = SolverControls(
                max_iterations=controls.inner_cap,
                residual_tolerance=None,
                full_accuracy_tolerance=controls.full_accuracy_tolerance,
                check_period=1 if controls.trace_inner else ell)

            def probe(j, v):
                dx = unpack_saddle(v, sub.s, sub.m)[2]
                if j % ell:
                    data.q_at[j] = eval_quadratic(shadow, dx)
                    trace_J(j, dx)
                    return False
                q = eval_quadratic(sub, dx)
                data.n_q += 1
                data.q_at[j] = q
                trace_J(j, dx)
                if controls.force_full_accuracy:
                    return False
                theta = theta_schedule(J, controls.n_inner, j)
                if sufficient_quadratic_decrease(J - q, gnorm,
                                                 controls.eps_q, theta):
                    return "quadratic_decrease"
                return False

        sol, inner = gmres_left_preconditioned(matvec, rhs, sc,
                                               precond_inverse=precond,
                                               stop_probe=probe,
                                               on_iteration=snapshot)
        dx = unpack_saddle(sol, sub.s, sub.m)[2].copy()
        return dx, inner, data

    # the two normal-equation strategies share the FOM probe
    sc = SolverControls(
        max_iterations=controls.inner_cap,
        residual_tolerance=None,
        full_accuracy_tolerance=controls.full_accuracy_tolerance,
        check_period=1 if controls.trace_inner else ell)

    def probe(j, dx, qk, gamma):
        trace_J(j, dx)
        if j % ell or controls.force_full_accuracy:
            return False
        theta = theta_schedule(J, controls.n_inner, j)
        if sufficient_quadratic_decrease(-qk, gnorm, controls.eps_q, theta):
            return "quadratic_decrease"
        return False

    if variant.formulation == "ST":
        matvec = lambda v: state_matvec(sub, v)
        if variant.preconditioner == "S":
            precond = lambda v: apply_schur_inverse(sub, v)
        else:
            precond = lambda v: v
        dx, inner = fom_left_preconditioned(matvec, precond, -g, sc,
                                            stop_probe=probe,
                                            on_iteration=snapshot)
        return dx, inner, data

    rhs = forcing_rhs(sub, dinv_b, rinv_d)
    if variant.preconditioner == "D":
        dx, inner = fom_forcing(sub.L, sub.D, sub.H, sub.R, rhs, sc,
                                stop_probe=probe, on_iteration=snapshot)
        return dx, inner, data

    # unpreconditioned forcing: generic FOM, then map back to state space
    matvec = lambda v: forcing_matvec(sub, v)
    dp, inner = fom_left_preconditioned(matvec, lambda v: v, rhs, sc,
                                        stop_probe=probe,
                                        on_iteration=snapshot)
    dx = sub.L.solve(dp)
    return dx, inner, data
