"""Forced Burgers flow and the twin assimilation problem built on it.

The PDE u_t + u u_x - nu u_xx = g on [0,1] with homogeneous Dirichlet
boundaries is discretized explicitly: first order in time, centered
second order in space.  The n interior values live at x_i = i dx for
i = 1..n; both stencil neighbours outside that range are held at zero.

A problem instance carries a noisy reference trajectory, sparse noisy
observations of it, a background state and the error covariances, and
can regenerate itself bit for bit from (config, seed).  Randomness is
split into four independent child streams of one numpy SeedSequence, in
spawn order: model error, observation error, background error, index
selection.  Within the model-error stream the reference-trajectory
draws come first, then the first-guess draws.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InstabilityError, IntegrityError, ParameterError
from .operators import (BlockBidiagonal, BlockDiagonalSPD,
                        SelectionObservation, build_sqexp_covariance,
                        split_blocks)

PROBLEM_SCHEMA = "wc4dvar-problem-v1"


@dataclass
class BurgersConfig:
    """Discretization, noise and covariance settings.

    total_time is derived (nsub * steps_per_subwindow * dt) so the
    partition into subwindows is consistent by construction.
    """

    n: int = 100
    dx: float = 0.01
    dt: float = 1e-5
    nu: float = 0.25
    nsub: int = 50
    steps_per_subwindow: int = 60
    amplitude: float = 0.1
    obs_per_subwindow: int = 20
    sigma2_obs: float = 1e-3
    sigma2_background: float = 1e-2
    background_length_scale: float = 0.25
    background_alpha: float = 1e-3
    model_length_scale: float = 0.05
    model_alpha: float = 1e-2
    obs_var_min: float = 1e-3
    obs_var_max: float = 1.0

    def __post_init__(self):
        for name in ("dx", "dt", "nu", "amplitude"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("n", "nsub", "steps_per_subwindow", "obs_per_subwindow"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1")
        if self.obs_per_subwindow > self.n:
            raise ParameterError("cannot observe more components than exist")
        if self.nu * self.dt / self.dx ** 2 > 0.5:
            raise ParameterError("explicit step is unstable: nu dt / dx^2 > 1/2")

    @property
    def total_time(self):
        return self.nsub * self.steps_per_subwindow * self.dt

    @property
    def sigma2_model(self):
        return 1e-4 * self.total_time / self.nsub

    @property
    def state_dim(self):
        return self.n * (self.nsub + 1)

    def grid(self):
        return self.dx * np.arange(1, self.n + 1)


def forcing(x, t, nu, amplitude):
    """Source term driving the flow; x may be an array."""
    k = amplitude
    s = t + 1.0
    a1 = np.pi * x * s
    a2 = np.pi * (1.0 - x) * s
    term1 = np.pi * k * (x + k * s * np.sin(a2)) * np.cos(a1) * np.sin(a2)
    term2 = np.pi * k * (1.0 - x - k * s * np.sin(a1)) * np.sin(a1) * np.cos(a2)
    term3 = 2.0 * nu * k ** 2 * np.pi ** 2 * s ** 2 * (
        np.sin(a1) * np.sin(a2) + np.cos(a1) * np.cos(a2))
    return term1 + term2 + term3


def _neighbour_diffs(u):
    # (u_{i+1} - u_{i-1}) and (u_{i+1} - 2u_i + u_{i-1}) with zero ghosts
    up = np.empty_like(u)
    um = np.empty_like(u)
    up[:-1] = u[1:]
    up[-1] = 0.0
    um[1:] = u[:-1]
    um[0] = 0.0
    return up, um


def burgers_step(u, cfg, forcing_row):
    """One explicit step; forcing_row already carries the dt factor."""
    adv = cfg.dt / (2.0 * cfg.dx)
    dif = cfg.nu * cfg.dt / cfg.dx ** 2
    up, um = _neighbour_diffs(u)
    return u - adv * u * (up - um) + dif * (up - 2.0 * u + um) + forcing_row


def step_tangent_bands(u, cfg):
    """Sub/diag/super bands of one step's Jacobian at state u.

    Band a multiplies the left neighbour, c the right one; the first
    entry of a and the last of c fall outside the domain and are unused.
    """
    adv = cfg.dt / (2.0 * cfg.dx)
    dif = cfg.nu * cfg.dt / cfg.dx ** 2
    up, um = _neighbour_diffs(u)
    a = adv * u + dif
    d = 1.0 - adv * (up - um) - 2.0 * dif
    c = -adv * u + dif
    return a, d, c


@dataclass
class AssimilationProblem:
    """Twin experiment: truth, observations, covariances and first guess."""

    config: BurgersConfig
    seed: int
    truth: np.ndarray
    background: np.ndarray
    obs: np.ndarray
    obs_indices: list
    first_guess: np.ndarray
    H: SelectionObservation = field(repr=False)
    B: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    D: BlockDiagonalSPD = field(repr=False)
    R: BlockDiagonalSPD = field(repr=False)
    forcing_table: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.config.n

    @property
    def nsub(self):
        return self.config.nsub

    @property
    def state_dim(self):
        return self.config.state_dim

    def integrate_subwindow(self, u0, j):
        """All states of subwindow j (1-based); shape (steps+1, n)."""
        cfg = self.config
        steps = cfg.steps_per_subwindow
        base = (j - 1) * steps
        out = np.empty((steps + 1, cfg.n))
        out[0] = u0
        for s in range(steps):
            out[s + 1] = burgers_step(out[s], cfg, self.forcing_table[base + s])
        if not np.isfinite(out[steps]).all():
            raise InstabilityError(f"integration blew up in subwindow {j}")
        return out

    def sweep(self, x):
        """Model and misfit sweep through all subwindows.

        Returns (b, d, segments): the stacked state-space misfits
        (background first, then one model-error misfit per subwindow),
        the observation misfits, and the per-subwindow trajectories
        needed to linearize around x.
        """
        blocks = split_blocks(np.asarray(x, dtype=float), self.n)
        if blocks.shape[0] != self.nsub + 1:
            raise ParameterError("state has the wrong number of subwindow blocks")
        b = np.empty_like(blocks)
        b[0] = self.background - blocks[0]
        segments = []
        for j in range(1, self.nsub + 1):
            traj = self.integrate_subwindow(blocks[j - 1], j)
            segments.append(traj)
            b[j] = traj[-1] - blocks[j]
        d = self.obs - self.H.apply(np.asarray(x, dtype=float))
        return b.ravel(), d, segments

    def tangent_blocks(self, segments):
        """Dense Jacobian of each subwindow map along its trajectory."""
        return [dense_tangent(traj, self.config) for traj in segments]

    def linearized_model(self, segments):
        return BlockBidiagonal(self.n, blocks=self.tangent_blocks(segments))

    def to_manifest(self):
        idx = np.concatenate([np.asarray(i, dtype=np.int64)
                              for i in self.obs_indices[1:]])
        return {
            "schema": PROBLEM_SCHEMA,
            "config": asdict(self.config),
            "seed": self.seed,
            "rng": "numpy-seedsequence-pcg64-spawn4",
            "digests": {
                "truth": _digest(self.truth),
                "background": _digest(self.background),
                "observations": _digest(self.obs),
                "indices": _digest(idx),
                "first_guess": _digest(self.first_guess),
            },
        }


def dense_tangent(traj, cfg):
    """Jacobian of one subwindow map, by pushing I through each step.

    Each step's Jacobian is tridiagonal, so the product is accumulated
    with three row-scaled updates instead of a matrix multiply.
    """
    M = np.eye(cfg.n)
    for s in range(traj.shape[0] - 1):
        a, d, c = step_tangent_bands(traj[s], cfg)
        Mn = d[:, None] * M
        Mn[1:] += a[1:, None] * M[:-1]
        Mn[:-1] += c[:-1, None] * M[1:]
        M = Mn
    return M


def tangent_apply(traj, cfg, v):
    """Directional derivative of one subwindow map."""
    w = np.asarray(v, dtype=float).copy()
    for s in range(traj.shape[0] - 1):
        a, d, c = step_tangent_bands(traj[s], cfg)
        up, um = _neighbour_diffs(w)
        w = d * w + a * um + c * up
    return w


def adjoint_apply(traj, cfg, w):
    """Transpose of tangent_apply (steps visited in reverse)."""
    v = np.asarray(w, dtype=float).copy()
    for s in range(traj.shape[0] - 2, -1, -1):
        a, d, c = step_tangent_bands(traj[s], cfg)
        out = d * v
        out[:-1] += a[1:] * v[1:]
        out[1:] += c[:-1] * v[:-1]
        v = out
    return v


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def build_forcing_table(cfg):
    """dt * g at every interior point and global time step."""
    steps = cfg.nsub * cfg.steps_per_subwindow
    x = cfg.grid()
    t = cfg.dt * np.arange(steps)
    return cfg.dt * forcing(x[None, :], t[:, None], cfg.nu, cfg.amplitude)


def generate_problem(cfg=None, seed=0):
    """Build the twin experiment for (cfg, seed); bit-reproducible."""
    cfg = cfg or BurgersConfig()
    ss = np.random.SeedSequence(seed)
    model_rng, obs_rng, bg_rng, idx_rng = [np.random.Generator(np.random.PCG64(s))
                                           for s in ss.spawn(4)]
    table = build_forcing_table(cfg)
    sig_m = np.sqrt(cfg.sigma2_model)

    # carrier for integrate_subwindow before the full problem exists
    problem = AssimilationProblem.__new__(AssimilationProblem)
    problem.config = cfg
    problem.forcing_table = table

    truth = np.empty((cfg.nsub + 1, cfg.n))
    truth[0] = cfg.amplitude * np.sin(2.0 * np.pi * cfg.grid())
    for j in range(1, cfg.nsub + 1):
        traj = problem.integrate_subwindow(truth[j - 1], j)
        truth[j] = traj[-1] + sig_m * model_rng.standard_normal(cfg.n)

    indices = [np.array([], dtype=np.int64)]
    obs_blocks = []
    for j in range(1, cfg.nsub + 1):
        idx = np.sort(idx_rng.choice(cfg.n, size=cfg.obs_per_subwindow,
                                     replace=False))
        indices.append(idx)
        noise = np.sqrt(cfg.sigma2_obs) * obs_rng.standard_normal(idx.size)
        obs_blocks.append(truth[j][idx] + noise)

    background = truth[0] + (np.sqrt(cfg.sigma2_background)
                             * bg_rng.standard_normal(cfg.n))

    first = np.empty_like(truth)
    first[0] = background
    for j in range(1, cfg.nsub + 1):
        traj = problem.integrate_subwindow(first[j - 1], j)
        first[j] = traj[-1] + sig_m * model_rng.standard_normal(cfg.n)

    B = build_sqexp_covariance(cfg.n, cfg.sigma2_background,
                               cfg.background_length_scale,
                               cfg.background_alpha, cfg.dx)
    Q = build_sqexp_covariance(cfg.n, cfg.sigma2_model,
                               cfg.model_length_scale, cfg.model_alpha, cfg.dx)
    r_block = np.diag(np.logspace(np.log10(cfg.obs_var_min),
                                  np.log10(cfg.obs_var_max),
                                  cfg.obs_per_subwindow))

    problem.seed = seed
    problem.truth = truth.ravel()
    problem.background = background
    problem.obs = np.concatenate(obs_blocks)
    problem.obs_indices = indices
    problem.first_guess = first.ravel()
    problem.H = SelectionObservation(cfg.n, indices)
    problem.B = B
    problem.Q = Q
    problem.D = BlockDiagonalSPD([B] + [Q] * cfg.nsub)
    problem.R = BlockDiagonalSPD([np.zeros((0, 0))] + [r_block] * cfg.nsub)
    return problem


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem.to_manifest(), fh, indent=2)
        fh.write("\n")


def load_problem(path):
    """Regenerate a stored problem and verify it digest for digest."""
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != PROBLEM_SCHEMA:
        raise IntegrityError(f"unsupported problem schema {manifest.get('schema')!r}")
    cfg = BurgersConfig(**manifest["config"])
    problem = generate_problem(cfg, manifest["seed"])
    fresh = problem.to_manifest()["digests"]
    for key, want in manifest["digests"].items():
        if fresh.get(key) != want:
            raise IntegrityError(f"digest mismatch for {key!r}")
    return problem
