"""Linearized subproblem shared by the three solution strategies.

A Gauss-Newton step minimizes the quadratic

    q(dx) = |L dx - b|^2_{D^-1} / 2 + |H dx - d|^2_{R^-1} / 2

over the stacked correction dx, where L couples consecutive subwindows
through the linearized model, b stacks the background and model-error
misfits and d the observation misfits.  This module builds that
subproblem from a nonlinear trajectory and exposes the pieces each
strategy needs: the quadratic and its gradient, the saddle-point system
with its three block preconditioners, and the normal-equation forms in
state and forcing variables.

Every operator application is routed through counting wrappers so a run
can report exactly how many times each building block was touched; the
wrapped operators from `operators` stay pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .operators import BlockBidiagonal

OP_KEYS = ("model", "obs", "L", "LT", "Linv", "LinvT", "Ltilde", "LtildeT",
           "Ltilde_inv", "Ltilde_invT", "D", "Dinv", "R", "Rinv", "H", "HT")


def new_op_counts():
    return {k: 0 for k in OP_KEYS}


class CountedBidiagonal:
    """Counting proxy around a BlockBidiagonal."""

    def __init__(self, op, counts, apply_keys=("L", "LT"),
                 solve_keys=("Linv", "LinvT")):
        self.op = op
        self.counts = counts
        self._apply_keys = apply_keys
        self._solve_keys = solve_keys

    def apply(self, v, transpose=False):
        self.counts[self._apply_keys[int(transpose)]] += 1
        return self.op.apply(v, transpose=transpose)

    def solve(self, v, transpose=False):
        self.counts[self._solve_keys[int(transpose)]] += 1
        return self.op.solve(v, transpose=transpose)


class CountedSPD:
    """Counting proxy around a BlockDiagonalSPD."""

    def __init__(self, op, counts, key):
        self.op = op
        self.counts = counts
        self.key = key

    def apply(self, v):
        self.counts[self.key] += 1
        return self.op.apply(v)

    def apply_inverse(self, v):
        self.counts[self.key + "inv"] += 1
        return self.op.apply_inverse(v)


class CountedSelection:
    """Counting proxy around a SelectionObservation."""

    def __init__(self, op, counts):
        self.op = op
        self.counts = counts

    def apply(self, v):
        self.counts["H"] += 1
        return self.op.apply(v)

    def apply_transpose(self, y):
        self.counts["HT"] += 1
        return self.op.apply_transpose(y)


@dataclass
class GNSubproblem:
    """One linearized subproblem, frozen at the current outer iterate.

    L holds the exact linearized-model blocks, L_tilde the approximation
    used inside preconditioners (None when the variant runs without one).
    b and d are the stacked state-space and observation-space misfits at
    the linearization point.  All operator fields are counting proxies
    sharing the `counts` dict.
    """

    L: CountedBidiagonal
    H: CountedSelection
    D: CountedSPD
    R: CountedSPD
    b: np.ndarray
    d: np.ndarray
    counts: dict
    L_tilde: CountedBidiagonal | None = None

    @property
    def n(self):
        return self.L.op.n

    @property
    def nsub(self):
        return self.L.op.nsub

    @property
    def s(self):
        return self.b.size

    @property
    def m(self):
        return self.d.size

    @property
    def saddle_dim(self):
        return 2 * self.s + self.m


def build_subproblem(raw_L, raw_H, raw_D, raw_R, b, d, counts,
                     model_approx=None):
    """Wrap raw operators in counting proxies and assemble a subproblem.

    model_approx selects the preconditioner's surrogate for the
    linearized-model blocks: None (no preconditioner), "zero",
    "identity" or "exact".
    """
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    if b.size != raw_L.n * (raw_L.nsub + 1):
        raise DimensionError("misfit b does not match the block layout")
    if d.size != raw_H.m:
        raise DimensionError("misfit d does not match the observation count")
    ltilde = None
    if model_approx is not None:
        n, nsub = raw_L.n, raw_L.nsub
        if model_approx == "zero":
            approx = BlockBidiagonal.with_zero_blocks(n, nsub)
        elif model_approx == "identity":
            approx = BlockBidiagonal.with_identity_blocks(n, nsub)
        elif model_approx == "exact":
            approx = raw_L
        else:
            raise ParameterError(f"unknown model approximation {model_approx!r}")
        ltilde = CountedBidiagonal(approx, counts,
                                   apply_keys=("Ltilde", "LtildeT"),
                                   solve_keys=("Ltilde_inv", "Ltilde_invT"))
    return GNSubproblem(
        L=CountedBidiagonal(raw_L, counts),
        H=CountedSelection(raw_H, counts),
        D=CountedSPD(raw_D, counts, "D"),
        R=CountedSPD(raw_R, counts, "R"),
        b=b, d=d, counts=counts, L_tilde=ltilde)


# -- quadratic model ---------------------------------------------------------

def eval_quadratic(sub, dx):
    """Value of the Gauss-Newton quadratic at dx.

    Touches each of L, D^{-1}, H and R^{-1} exactly once.
    """
    r1 = sub.L.apply(dx) - sub.b
    r2 = sub.H.apply(dx) - sub.d
    return 0.5 * float(r1 @ sub.D.apply_inverse(r1)
                       + r2 @ sub.R.apply_inverse(r2))


def quadratic_gradient_parts(sub):
    """Weighted misfits (D^{-1}b, R^{-1}d) reused across assemblies.

    The gradient of the quadratic at dx = 0 is
    -(L' D^{-1} b + H' R^{-1} d), which equals the gradient of the
    nonlinear objective at the linearization point.
    """
    return sub.D.apply_inverse(sub.b), sub.R.apply_inverse(sub.d)


def gradient_from_parts(sub, dinv_b, rinv_d):
    return -(sub.L.apply(dinv_b, transpose=True)
             + sub.H.apply_transpose(rinv_d))


# -- saddle formulation ------------------------------------------------------

def unpack_saddle(v, s, m):
    """Split a stacked saddle vector into (lam, mu, dx) views."""
    if v.size != 2 * s + m:
        raise DimensionError("saddle vector has the wrong length")
    return v[:s], v[s:s + m], v[s + m:]


def pack_saddle(lam, mu, dx):
    return np.concatenate([lam, mu, dx])


def saddle_rhs(sub):
    """Right-hand side (b, d, 0) of the saddle system."""
    return np.concatenate([sub.b, sub.d, np.zeros(sub.s)])


def saddle_matvec(sub, v):
    """Apply the symmetric indefinite saddle matrix.

    Rows: (D lam + L dx, R mu + H dx, L' lam + H' mu).
    """
    lam, mu, dx = unpack_saddle(np.asarray(v, dtype=float), sub.s, sub.m)
    top = sub.D.apply(lam) + sub.L.apply(dx)
    mid = sub.R.apply(mu) + sub.H.apply(dx)
    bot = sub.L.apply(lam, transpose=True) + sub.H.apply_transpose(mu)
    return pack_saddle(top, mid, bot)


def _require_ltilde(sub):
    if sub.L_tilde is None:
        raise ParameterError("this preconditioner needs a model approximation")
    return sub.L_tilde


def apply_schur_inverse(sub, v):
    """S^{-1} v with S = L~' D^{-1} L~, via two triangular solves."""
    lt = _require_ltilde(sub)
    return lt.solve(sub.D.apply(lt.solve(v, transpose=True)))


def apply_precond_inverse(sub, which, r):
    """Inverse action of one of the saddle preconditioners.

    which = "M": inexact-constraint block triangular form; two solves
        with L~ and one with R.
    which = "B": block diagonal (D, R, -S); the dx block is -S^{-1} r3,
        exactly zero whenever r3 is.
    which = "T": lower block triangular (D, R on the diagonal, S in the
        corner), applied by back-substitution.
    """
    r = np.asarray(r, dtype=float)
    r1, r2, r3 = unpack_saddle(r, sub.s, sub.m)
    if which == "M":
        lt = _require_ltilde(sub)
        lam = lt.solve(r3, transpose=True)
        mu = sub.R.apply_inverse(r2)
        dx = lt.solve(r1 - sub.D.apply(lam))
        return pack_saddle(lam, mu, dx)
    if which == "B":
        lam = sub.D.apply_inverse(r1)
        mu = sub.R.apply_inverse(r2)
        dx = -apply_schur_inverse(sub, r3)
        return pack_saddle(lam, mu, dx)
    if which == "T":
        lt = _require_ltilde(sub)
        dx = apply_schur_inverse(sub, r3)
        mu = sub.R.apply_inverse(r2 - sub.H.apply(dx))
        lam = sub.D.apply_inverse(r1 - lt.apply(dx))
        return pack_saddle(lam, mu, dx)
    raise ParameterError(f"unknown saddle preconditioner {which!r}")


# -- state and forcing formulations ------------------------------------------

def state_matvec(sub, v):
    """Hessian of the quadratic in state variables:
    L' D^{-1} L v + H' R^{-1} H v."""
    a = sub.L.apply(sub.D.apply_inverse(sub.L.apply(v)), transpose=True)
    c = sub.H.apply_transpose(sub.R.apply_inverse(sub.H.apply(v)))
    return a + c


def state_rhs(sub, dinv_b, rinv_d):
    """L' D^{-1} b + H' R^{-1} d, from the cached weighted misfits."""
    return (sub.L.apply(dinv_b, transpose=True)
            + sub.H.apply_transpose(rinv_d))


def forcing_rhs(sub, dinv_b, rinv_d):
    """D^{-1} b + L^{-T} H' R^{-1} d, from the cached weighted misfits."""
    return dinv_b + sub.L.solve(sub.H.apply_transpose(rinv_d), transpose=True)


def forcing_matvec(sub, v):
    """Hessian in forcing variables: D^{-1} v + L^{-T} H' R^{-1} H L^{-1} v.

    Only needed by the unpreconditioned forcing variant; the
    D-preconditioned solver has its own fused iteration.
    """
    u = sub.L.solve(v)
    c = sub.L.solve(sub.H.apply_transpose(sub.R.apply_inverse(sub.H.apply(u))),
                    transpose=True)
    return sub.D.apply_inverse(v) + c
