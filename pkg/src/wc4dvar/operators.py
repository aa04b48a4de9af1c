"""Block-structured linear operators on windowed state vectors.

A state vector covering a window with ``nsub`` subwindows is stored flat,
with block j occupying ``v[j*n:(j+1)*n]`` for j = 0..nsub.  Observation
vectors concatenate the per-subwindow observation blocks in the same
order; block lengths may differ (and may be zero).

All operators here are pure: ``apply``/``solve`` never mutate their input
and hold no per-call state, so a single instance can be shared by
concurrent solves.
"""

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError, ParameterError


def split_blocks(v, n):
    """Return a (nblocks, n) view of a flat state vector."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size % n:
        raise DimensionError(f"state length {v.size} is not a multiple of block size {n}")
    return v.reshape(-1, n)


def join_blocks(blocks):
    """Concatenate block rows back into a flat state vector."""
    return np.asarray(blocks).reshape(-1)


class BlockBidiagonal:
    """Lower block-bidiagonal operator with unit diagonal blocks.

    Arguments:
        n: block size.
        blocks: sequence of nsub dense (n, n) model blocks, ordered by
            subwindow; block j maps states at the start of subwindow j+1
            to its end.  May be None for the degenerate kinds below.
        kind: "exact" (use the given blocks), "identity" (every block is
            the identity) or "zero" (every block vanishes, so the
            operator is the identity on the whole window).

    The forward map sends block j of the input to
    ``v_j - M_j v_{j-1}`` (and leaves block 0 alone); the transpose and
    the two triangular solves follow from that structure.  Solves are
    sequential recurrences across the window, which is what makes their
    cost stand apart from every other operator in this package.
    """

    def __init__(self, n, blocks=None, kind="exact"):
        if kind not in ("exact", "identity", "zero"):
            raise ParameterError(f"unknown block kind {kind!r}")
        if kind == "exact":
            if blocks is None:
                raise ParameterError("kind 'exact' requires model blocks")
            blocks = [np.asarray(b, dtype=float) for b in blocks]
            for b in blocks:
                if b.shape != (n, n):
                    raise DimensionError(f"model block shape {b.shape} != ({n}, {n})")
        self.n = int(n)
        self.kind = kind
        self.blocks = blocks
        self.nsub = len(blocks) if kind == "exact" else None

    @classmethod
    def with_identity_blocks(cls, n, nsub):
        op = cls(n, None, kind="identity")
        op.nsub = nsub
        return op

    @classmethod
    def with_zero_blocks(cls, n, nsub):
        op = cls(n, None, kind="zero")
        op.nsub = nsub
        return op

    def _check(self, v):
        w = split_blocks(v, self.n)
        if self.nsub is not None and w.shape[0] != self.nsub + 1:
            raise DimensionError(
                f"state has {w.shape[0]} blocks, operator expects {self.nsub + 1}")
        return w

    def _mat(self, j):
        # block coupling subwindow j+1 to j (0-based j over the subdiagonal)
        return self.blocks[j]

    def apply(self, v, transpose=False):
        """Apply the operator (or its transpose) to a flat state vector."""
        w = self._check(v)
        nb = w.shape[0]
        if self.kind == "zero":
            return v.copy()
        out = w.copy()
        if self.kind == "identity":
            if not transpose:
                out[1:] -= w[:-1]
            else:
                out[:-1] -= w[1:]
            return out.reshape(-1)
        if not transpose:
            for j in range(1, nb):
                out[j] -= self._mat(j - 1) @ w[j - 1]
        else:
            for j in range(nb - 1):
                out[j] -= self._mat(j).T @ w[j + 1]
        return out.reshape(-1)

    def solve(self, v, transpose=False):
        """Solve L u = v (or L^T u = v) by forward/backward recurrence."""
        w = self._check(v)
        nb = w.shape[0]
        if self.kind == "zero":
            return v.copy()
        out = w.copy()
        if self.kind == "identity":
            if not transpose:
                for j in range(1, nb):
                    out[j] += out[j - 1]
            else:
                for j in range(nb - 2, -1, -1):
                    out[j] += out[j + 1]
            return out.reshape(-1)
        if not transpose:
            for j in range(1, nb):
                out[j] += self._mat(j - 1) @ out[j - 1]
        else:
            for j in range(nb - 2, -1, -1):
                out[j] += self._mat(j).T @ out[j + 1]
        return out.reshape(-1)


class BlockDiagonalSPD:
    """Block-diagonal symmetric positive-definite operator.

    Arguments:
        blocks: sequence of dense symmetric positive-definite matrices;
            sizes may differ and zero-size blocks are allowed.
        inverse_mode: "exact" for cached-Cholesky solves, or ("cg", k)
            to replace every inverse application by exactly k conjugate
            gradient iterations from a zero start.  The cg mode is a
            deterministic linear map, but it is not the exact inverse
            and it is not symmetric in finite precision.

    Raises NumericalError at construction when a block is visibly
    non-symmetric, and on first factorization when one is not positive
    definite.
    """

    def __init__(self, blocks, inverse_mode="exact"):
        self.blocks = []
        for b in blocks:
            b = np.asarray(b, dtype=float)
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise DimensionError(f"covariance block shape {b.shape} is not square")
            if b.size and not np.allclose(b, b.T, rtol=0.0, atol=1e-12 * max(1.0, abs(b).max())):
                raise NumericalError("covariance block is not symmetric")
            self.blocks.append(b)
        self.sizes = np.array([b.shape[0] for b in self.blocks])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.dim = int(self.offsets[-1])
        self.set_inverse_mode(inverse_mode)
        self._factors = None

    def set_inverse_mode(self, mode):
        if mode == "exact":
            self.inverse_mode = "exact"
            self.cg_iterations = None
        elif isinstance(mode, tuple) and len(mode) == 2 and mode[0] == "cg":
            k = int(mode[1])
            if k < 1:
                raise ParameterError("cg iteration count must be >= 1")
            self.inverse_mode = "cg"
            self.cg_iterations = k
        else:
            raise ParameterError(f"unknown inverse mode {mode!r}")

    def _split(self, v):
        v = np.asarray(v)
        if v.shape != (self.dim,):
            raise DimensionError(f"operand length {v.shape} != ({self.dim},)")
        return [v[self.offsets[j]:self.offsets[j + 1]] for j in range(len(self.blocks))]

    def apply(self, v):
        parts = self._split(v)
        return np.concatenate([b @ p if b.size else p
                               for b, p in zip(self.blocks, parts)])

    def _factorize(self):
        if self._factors is None:
            try:
                self._factors = [scipy.linalg.cho_factor(b) if b.size else None
                                 for b in self.blocks]
            except scipy.linalg.LinAlgError as exc:
                raise NumericalError(f"covariance block is not positive definite: {exc}")
        return self._factors

    def apply_inverse(self, v):
        parts = self._split(v)
        if self.inverse_mode == "exact":
            factors = self._factorize()
            return np.concatenate([scipy.linalg.cho_solve(f, p) if f is not None else p
                                   for f, p in zip(factors, parts)])
        from .krylov import cg
        out = []
        for b, p in zip(self.blocks, parts):
            if not b.size:
                out.append(p)
                continue
            out.append(cg(lambda u, b=b: b @ u, p, self.cg_iterations))
        return np.concatenate(out)


def apply_covariance(op, mode, v):
    """Apply a BlockDiagonalSPD operator in 'direct' or 'inverse' mode."""
    if mode == "direct":
        return op.apply(v)
    if mode == "inverse":
        return op.apply_inverse(v)
    raise ParameterError(f"unknown covariance mode {mode!r}")


class SelectionObservation:
    """Observation operator selecting state components per subwindow.

    Arguments:
        n: state block size.
        indices: nsub+1 sequences of strictly increasing indices in
            [0, n); entry j lists the components of state block j that
            are observed.  Empty entries (no observations at that time)
            are allowed.
    """

    def __init__(self, n, indices):
        self.n = int(n)
        self.indices = []
        for idx in indices:
            idx = np.asarray(idx, dtype=int)
            if idx.size:
                if idx.min() < 0 or idx.max() >= n:
                    raise DimensionError("observation index out of range")
                if np.any(np.diff(idx) <= 0):
                    raise ParameterError("observation indices must be strictly increasing")
            self.indices.append(idx)
        self.m_per_block = np.array([idx.size for idx in self.indices])
        self.offsets = np.concatenate([[0], np.cumsum(self.m_per_block)])
        self.m = int(self.offsets[-1])
        self.nsub = len(self.indices) - 1

    def apply(self, v):
        w = split_blocks(v, self.n)
        if w.shape[0] != self.nsub + 1:
            raise DimensionError(
                f"state has {w.shape[0]} blocks, operator expects {self.nsub + 1}")
        return np.concatenate([w[j][idx] for j, idx in enumerate(self.indices)])

    def apply_transpose(self, y):
        y = np.asarray(y)
        if y.shape != (self.m,):
            raise DimensionError(f"observation length {y.shape} != ({self.m},)")
        out = np.zeros((self.nsub + 1, self.n))
        for j, idx in enumerate(self.indices):
            out[j][idx] = y[self.offsets[j]:self.offsets[j + 1]]
        return out.reshape(-1)


def build_sqexp_covariance(n, variance, length_scale, alpha, dx):
    """Dense squared-exponential covariance with a diagonal floor.

    Returns ``variance * (alpha I + (1 - alpha) C)`` where
    ``C_ij = exp(-d(i,j)^2 / (2 L^2))`` and d is the physical distance
    ``|i - j| dx`` between grid points.  The alpha floor bounds the
    smallest eigenvalue away from zero at ``alpha * variance``, which
    fixes the conditioning of the result; the correlation part alone is
    numerically singular for smooth kernels.

    Arguments:
        n: matrix dimension.
        variance: marginal variance (diagonal value).
        length_scale: correlation length L in physical units.
        alpha: diagonal floor weight in (0, 1].
        dx: grid spacing.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError("alpha must lie in (0, 1]")
    if variance <= 0.0 or length_scale <= 0.0 or dx <= 0.0:
        raise ParameterError("variance, length_scale and dx must be positive")
    idx = np.arange(n)
    d = (idx[:, None] - idx[None, :]) * dx
    corr = np.exp(-(d * d) / (2.0 * length_scale * length_scale))
    return variance * (alpha * np.eye(n) + (1.0 - alpha) * corr)
