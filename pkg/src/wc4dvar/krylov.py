"""Krylov solvers used by the inner loop of the incremental algorithms.

All solvers start from the zero vector and work matrix-free through
callables or small operator objects.  The GMRES routine applies a left
preconditioner through its inverse action, while the two FOM routines
apply a symmetric positive-definite preconditioner directly (never its
inverse); the coupled two-basis recurrence keeps the preconditioned and
unpreconditioned Krylov bases side by side, which is what allows the
quadratic value and its gradient norm to be read off at no extra cost.

Termination is shared between the solver (residual tests, iteration cap)
and an optional caller-supplied probe which sees the current candidate
solution at a configurable period and may stop the iteration with a
reason string of its own.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError

# Residual reductions beyond this factor are indistinguishable from
# working-precision noise in float64; treat them as a full-accuracy solve.
ATTAINABLE_REDUCTION = 1e-13

_REORTH_THRESHOLD = 1e-8


@dataclass
class SolverControls:
    """Knobs shared by the inner solvers.

    residual_tolerance is relative to the initial (preconditioned)
    residual norm and may be None to disable the relative test;
    full_accuracy_tolerance is absolute.  check_period sets how often
    the stop probe is consulted.
    """

    max_iterations: int = 100
    residual_tolerance: float | None = None
    full_accuracy_tolerance: float = 1e-12
    check_period: int = 1

    def validate(self):
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be at least 1")
        if self.residual_tolerance is not None and self.residual_tolerance <= 0:
            raise ParameterError("residual_tolerance must be positive when set")
        if self.full_accuracy_tolerance <= 0:
            raise ParameterError("full_accuracy_tolerance must be positive")
        if self.check_period < 1:
            raise ParameterError("check_period must be at least 1")


@dataclass
class InnerTrace:
    """Per-iteration record of one inner solve.

    residual_norms[0] is the initial residual norm, entry j the norm
    after iteration j.  For the FOM solvers q_values is aligned the same
    way and holds the quadratic value at each iterate (nan at index 0).
    """

    residual_norms: list = field(default_factory=list)
    q_values: list = field(default_factory=list)
    termination_reason: str = ""
    iterations: int = 0


def cg(matvec, rhs, iterations):
    """Run exactly `iterations` conjugate-gradient steps from zero.

    Early exit happens only on an exactly zero residual.  Raises
    NumericalError when the operator reveals itself as not positive
    definite (non-positive curvature along a search direction).
    """
    if iterations < 1:
        raise ParameterError("iterations must be at least 1")
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rho = float(r @ r)
    if rho == 0.0:
        return x
    p = r.copy()
    for _ in range(iterations):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise NumericalError("conjugate gradients met non-positive curvature")
        a = rho / pAp
        x += a * p
        r -= a * Ap
        rho_next = float(r @ r)
        if rho_next == 0.0:
            break
        p = r + (rho_next / rho) * p
        rho = rho_next
    return x


def _probe_reason(result, default="probe"):
    if isinstance(result, str):
        return result
    return default if result else None


def gmres_left_preconditioned(matvec, rhs, controls, precond_inverse=None,
                              stop_probe=None, on_iteration=None):
    """GMRES on the left-preconditioned system, zero initial guess.

    Arguments:
        matvec: action of the system matrix.
        rhs: right-hand side.
        controls: SolverControls; the residual tests act on the
            preconditioned residual norm produced by the recurrence.
        precond_inverse: action of P^{-1}, or None for no preconditioner.
        stop_probe: optional callable probe(j, candidate) consulted every
            check_period iterations with the current approximate solution;
            a truthy return stops the iteration (a returned string becomes
            the termination reason).

    Returns (solution, InnerTrace).  Modified Gram-Schmidt with a single
    reorthogonalization pass when orthogonality degrades; no restarts, so
    memory grows linearly with the iteration count.
    """
    controls.validate()
    rhs = np.asarray(rhs, dtype=float)
    dim = rhs.size
    trace = InnerTrace()
    if precond_inverse is None:
        precond_inverse = lambda v: v

    r0 = precond_inverse(rhs)
    beta = float(np.linalg.norm(r0))
    trace.residual_norms.append(beta)
    if beta == 0.0:
        trace.termination_reason = "full_accuracy"
        return np.zeros(dim), trace

    maxit = min(controls.max_iterations, dim)
    V = np.empty((maxit + 1, dim))
    V[0] = r0 / beta
    Hess = np.zeros((maxit + 1, maxit))
    cs = np.zeros(maxit)
    sn = np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    floor = max(controls.full_accuracy_tolerance, ATTAINABLE_REDUCTION * beta)

    def form_solution(k):
        # back-substitution on the rotated (triangular) Hessenberg
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - Hess[i, i + 1:k] @ y[i + 1:k]) / Hess[i, i]
        return y @ V[:k]

    x = None
    reason = None
    k = 0
    for j in range(maxit):
        # copy: the operators may hand back one of their inputs
        w = np.array(precond_inverse(matvec(V[j])), dtype=float)
        norm_before = float(np.linalg.norm(w))
        for i in range(j + 1):
            hij = float(V[i] @ w)
            w -= hij * V[i]
            Hess[i, j] = hij
        # one reorthogonalization pass if the basis lost orthogonality
        defect = V[:j + 1] @ w
        if np.abs(defect).max(initial=0.0) > _REORTH_THRESHOLD * max(norm_before, 1e-300):
            w -= defect @ V[:j + 1]
            Hess[:j + 1, j] += defect
        hnext = float(np.linalg.norm(w))
        Hess[j + 1, j] = hnext

        # Givens update of the least-squares system
        for i in range(j):
            t = cs[i] * Hess[i, j] + sn[i] * Hess[i + 1, j]
            Hess[i + 1, j] = -sn[i] * Hess[i, j] + cs[i] * Hess[i + 1, j]
            Hess[i, j] = t
        denom = float(np.hypot(Hess[j, j], Hess[j + 1, j]))
        if denom == 0.0:
            raise NumericalError("GMRES least-squares system collapsed")
        cs[j] = Hess[j, j] / denom
        sn[j] = Hess[j + 1, j] / denom
        Hess[j, j] = denom
        Hess[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        resnorm = abs(g[j + 1])
        trace.residual_norms.append(resnorm)
        k = j + 1

        exhausted = hnext <= 1e-14 * max(norm_before, 1e-300)
        if exhausted and resnorm > max(floor, 1e-10 * beta):
            raise NumericalError("Arnoldi breakdown with nonzero residual")
        if exhausted or resnorm <= floor:
            reason = "full_accuracy"
        elif (controls.residual_tolerance is not None
                and resnorm <= controls.residual_tolerance * beta):
            reason = "tolerance"
        elif stop_probe is not None and k % controls.check_period == 0:
            x = form_solution(k)
            reason = _probe_reason(stop_probe(k, x))
            if not reason:
                x = None
        if on_iteration is not None:
            on_iteration(k)
        if reason:
            break
        V[j + 1] = w / hnext

    if reason is None:
        reason = "iteration_cap"
    if x is None:
        x = form_solution(k)
    trace.termination_reason = reason
    trace.iterations = k
    return x, trace


def _coupled_fom(apply_column, precond_seed, rhs, controls, stop_probe,
                 solution_basis, on_iteration=None):
    """Shared core of the two coupled-basis FOM variants.

    apply_column(k, U, Q, P) must return the pair (v, w) extending the
    preconditioned/unpreconditioned bases for column k, along with any
    auxiliary bookkeeping it needs (the forcing variant stores L^{-1}U_k
    into P).  precond_seed produces M b for the first column.
    solution_basis picks which stored basis the solution is drawn from.

    Once the recurrence reaches the accuracy attainable in floating
    point, w'v collapses to the noise level of its inner product;
    continuing past that moment would corrupt the bases, so the
    iteration ends there and returns the current iterate, whose
    coefficients are still sound (a happy breakdown).  Only a w'v that
    is negative at the scale of healthy values reports a genuine loss
    of positivity.
    """
    controls.validate()
    rhs = np.asarray(rhs, dtype=float)
    dim = rhs.size
    trace = InnerTrace()
    eps = np.finfo(float).eps

    w = precond_seed(rhs)
    bw = float(rhs @ w)
    noise = 64.0 * eps * float(np.linalg.norm(rhs)) * float(np.linalg.norm(w))
    if bw < -noise:
        raise NumericalError("preconditioner is not positive definite on the rhs")
    beta = np.sqrt(max(bw, 0.0))
    trace.residual_norms.append(beta)
    trace.q_values.append(np.nan)
    if beta == 0.0:
        trace.termination_reason = "full_accuracy"
        return np.zeros(dim), trace

    maxit = min(controls.max_iterations, dim)
    U = np.empty((maxit + 1, dim))
    Q = np.empty((maxit + 1, dim))
    P = np.empty((maxit, dim)) if solution_basis == "aux" else None
    U[0] = w / beta
    Q[0] = rhs / beta
    z = np.zeros(maxit + 1)
    z[0] = float(U[0] @ rhs)
    T = np.zeros((maxit + 1, maxit))
    floor = max(controls.full_accuracy_tolerance, ATTAINABLE_REDUCTION * beta)

    def solution_at(k):
        basis = P if solution_basis == "aux" else U
        yk = beta * np.linalg.solve(T[:k, :k], np.eye(k)[:, 0])
        return yk @ basis[:k]

    x = None
    reason = None
    k_done = 0
    wv_scale = bw
    for k in range(maxit):
        v, w = apply_column(k, U, Q, P)
        # copies: the operators may hand back one of their inputs, and
        # v and w must never share storage once the joint update runs
        v = np.array(v, dtype=float)
        w = np.array(w, dtype=float)
        for i in range(k + 1):
            tik = float(Q[i] @ v)
            v -= tik * U[i]
            w -= tik * Q[i]
            T[i, k] = tik

        wv = float(w @ v)
        noise = 64.0 * eps * float(np.linalg.norm(w)) * float(np.linalg.norm(v))
        if wv < -noise and wv < -1e-3 * wv_scale:
            raise NumericalError("loss of positivity in the coupled recurrence")
        wv_scale = max(wv_scale, wv)
        tnext = np.sqrt(max(wv, 0.0))
        T[k + 1, k] = tnext

        try:
            y = beta * np.linalg.solve(T[:k + 1, :k + 1], np.eye(k + 1)[:, 0])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"projected system is singular: {exc}")
        gamma = abs(tnext * y[k])
        qk = -0.5 * float(z[:k + 1] @ y)
        trace.residual_norms.append(gamma)
        trace.q_values.append(qk)
        k_done = k + 1

        if gamma <= floor:
            x = y @ (P if solution_basis == "aux" else U)[:k_done]
            reason = "full_accuracy"
        elif wv <= noise:
            x = y @ (P if solution_basis == "aux" else U)[:k_done]
            reason = "breakdown"
        elif stop_probe is not None and k_done % controls.check_period == 0:
            x = y @ (P if solution_basis == "aux" else U)[:k_done]
            reason = _probe_reason(stop_probe(k_done, x, qk, gamma))
            if not reason:
                x = None
        if on_iteration is not None:
            on_iteration(k_done)
        if reason:
            break
        U[k + 1] = v / tnext
        Q[k + 1] = w / tnext
        z[k + 1] = float(U[k + 1] @ rhs)

    if reason is None:
        reason = "iteration_cap"
    if x is None:
        x = solution_at(k_done)
    trace.termination_reason = reason
    trace.iterations = k_done
    return x, trace


def fom_left_preconditioned(matvec, precond_apply, rhs, controls,
                            stop_probe=None, on_iteration=None):
    """Full orthogonalization method for SPD systems, SPD preconditioner.

    The preconditioner M is applied directly; its inverse never appears.
    Tracks, for free, the value q_k of the quadratic
    q(x) = x'Ax/2 - b'x at the current iterate and the M-norm gamma_k of
    its gradient, which drive the caller's termination rule via
    stop_probe(k, candidate, q_k, gamma_k).

    Returns (solution, InnerTrace); the trace's residual_norms hold the
    gamma sequence.
    """
    def apply_column(k, U, Q, P):
        w = matvec(U[k])
        return precond_apply(w), w

    def seed(b):
        return precond_apply(b)

    return _coupled_fom(apply_column, seed, rhs, controls, stop_probe,
                        solution_basis="main", on_iteration=on_iteration)


def fom_forcing(L, D, H, R, rhs, controls, stop_probe=None, on_iteration=None):
    """FOM specialised to the model-error (forcing) normal equations.

    Solves (D^{-1} + L^{-T} H' R^{-1} H L^{-1}) dp = rhs with D as the
    direct preconditioner, while keeping the auxiliary basis P = L^{-1}U
    so the returned solution is already mapped back to state space
    (dx = P y).  Exactly one forward and one transpose solve with L per
    iteration; D^{-1} is never applied.

    The caller assembles rhs = D^{-1}b + L^{-T}H'R^{-1}d itself.
    """
    def apply_column(k, U, Q, P):
        P[k] = L.solve(U[k])
        t = L.solve(H.apply_transpose(R.apply_inverse(H.apply(P[k]))),
                    transpose=True)
        w = Q[k] + t
        v = U[k] + D.apply(t)
        return v, w

    def seed(r):
        return D.apply(r)

    return _coupled_fom(apply_column, seed, rhs, controls, stop_probe,
                        solution_basis="aux", on_iteration=on_iteration)
