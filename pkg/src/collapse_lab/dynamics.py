"""Integration of the collapse flow ``db/dt = -grad_S f(b) + w(b)``.

Zero-noise runs use classical RK4; noisy runs use Euler-Maruyama with
isotropic Gaussian noise projected onto the tangent space. Every step ends
with the reflecting retraction of :func:`~collapse_lab.state_space.project_to_sphere`,
so iterates never leave S+.

The per-step kernels are compiled with numba and shared by the public
single-step functions, :func:`run_trajectory` and the ensemble runner, so a
trial replayed through any of them is bit-identical.
"""
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .potentials import (
    Potential,
    TransverseFieldSpec,
    _quartic_value,
    _sphere_grad_into,
    _transverse_into,
)
from .state_space import (
    BPoint,
    ProjectionError,
    TangentVector,
    _project_into,
    _tangent_project_into,
)
from .streams import Stream, next_normal, run_chunked, trial_states

__all__ = [
    "NoiseConfig",
    "DynamicsConfig",
    "Outcome",
    "Trajectory",
    "DescentReport",
    "drift",
    "step_deterministic",
    "step_stochastic",
    "jitter_initial",
    "run_trajectory",
    "run_trials",
    "descent_check",
    "CENSORED",
    "FAILED",
]

#: outcome codes returned by the compiled runners; codes >= 0 are vertex indices
CENSORED = -1
FAILED = -2

DESCENT_TOL = 1e-10


@dataclass(frozen=True)
class NoiseConfig:
    """Noise levels.

    ``initial_jitter`` perturbs the start once (residual environmental jitter
    at t = 0); ``continuous_sigma`` drives the environmental noise during the
    flow. Both are in units of the sphere's radius (per sqrt(time) for the
    continuous part).
    """

    initial_jitter: float = 0.0
    continuous_sigma: float = 1e-3

    def __post_init__(self):
        for name in ("initial_jitter", "continuous_sigma"):
            v = float(getattr(self, name))
            if not v >= 0.0 or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite number >= 0, got {v!r}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DynamicsConfig:
    step_size: float = 1e-3
    t_max: float = 200.0
    collapse_eps: float = 1e-6
    potential: Potential = field(default_factory=Potential)
    transverse: TransverseFieldSpec = field(default_factory=TransverseFieldSpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if not self.step_size > 0.0:
            raise ValueError("step_size must be > 0")
        if not self.t_max > 0.0:
            raise ValueError("t_max must be > 0")
        if not 0.0 < self.collapse_eps < 0.5:
            raise ValueError("collapse_eps must lie in (0, 0.5)")

    @property
    def max_steps(self):
        return int(math.floor(self.t_max / self.step_size + 1e-9))

    def kernel_args(self, N):
        ti, tj, strength = self.transverse.kernel_args(N)
        return self.potential.weights_for(N), ti, tj, strength


@dataclass(frozen=True)
class Outcome:
    """How a trial ended.

    ``kind`` is ``"collapsed"`` (with vertex index and collapse time),
    ``"censored"`` (no collapse by ``t_max``) or ``"failed"`` (the integrator
    blew up; counted separately from censoring).
    """

    kind: str
    vertex_index: int = None
    collapse_time: float = None

    def __post_init__(self):
        if self.kind == "collapsed":
            if self.vertex_index is None or self.collapse_time is None:
                raise ValueError("collapsed outcome needs vertex_index and collapse_time")
        elif self.kind in ("censored", "failed"):
            if self.vertex_index is not None or self.collapse_time is not None:
                raise ValueError(f"{self.kind} outcome carries no vertex or time")
        else:
            raise ValueError(f"unknown outcome kind {self.kind!r}")

    @classmethod
    def from_code(cls, code, steps, h):
        if code >= 0:
            return cls("collapsed", int(code), steps * h)
        return cls("censored" if code == CENSORED else "failed")

    @property
    def collapsed(self):
        return self.kind == "collapsed"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded run: ``times[k]``, ``points[k]`` (rows on S+) and
    ``f_values[k] = f(points[k])``."""

    times: np.ndarray
    points: np.ndarray
    f_values: np.ndarray
    outcome: Outcome

    def __post_init__(self):
        if not (len(self.times) == len(self.points) == len(self.f_values)):
            raise ValueError("times, points and f_values must have equal lengths")

    def __len__(self):
        return len(self.times)

    def bpoints(self):
        return [BPoint(row) for row in self.points]


@dataclass(frozen=True)
class DescentReport:
    passed: bool
    worst_violation: float
    tolerance: float = DESCENT_TOL


# compiled kernels ---------------------------------------------------------
# Work arrays travel as a tuple (g, tr, k1, k2, k3, k4, tmp, xi): gradient,
# transverse field, RK stages, trial point and noise. Helpers are inlined so
# no array is reference-counted inside the step loop.


@nb.njit(inline="always")
def _alloc_work(N):
    return (np.empty(N), np.empty(N), np.empty(N), np.empty(N),
            np.empty(N), np.empty(N), np.empty(N), np.empty(N))


@nb.njit(inline="always")
def _drift_into(b, w, ti, tj, strength, g, tr, out):
    _sphere_grad_into(b, w, g)
    _transverse_into(b, g, ti, tj, strength, tr)
    for n in range(b.size):
        out[n] = tr[n] - g[n]


@nb.njit(inline="always")
def _rk4_into(b, h, w, ti, tj, strength, work, out):
    g, tr, k1, k2, k3, k4, tmp, _ = work
    N = b.size
    _drift_into(b, w, ti, tj, strength, g, tr, k1)
    for n in range(N):
        tmp[n] = b[n] + 0.5 * h * k1[n]
    _drift_into(tmp, w, ti, tj, strength, g, tr, k2)
    for n in range(N):
        tmp[n] = b[n] + 0.5 * h * k2[n]
    _drift_into(tmp, w, ti, tj, strength, g, tr, k3)
    for n in range(N):
        tmp[n] = b[n] + h * k3[n]
    _drift_into(tmp, w, ti, tj, strength, g, tr, k4)
    for n in range(N):
        tmp[n] = b[n] + (h / 6.0) * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])
    return _project_into(tmp, out)


@nb.njit(inline="always")
def _tangent_noise_into(b, xi, s0, s1):
    for n in range(b.size):
        xi[n], s0, s1 = next_normal(s0, s1)
    _tangent_project_into(b, xi, xi)
    return s0, s1


@nb.njit(inline="always")
def _em_into(b, h, sigma, w, ti, tj, strength, work, out, s0, s1):
    g, tr, k1, _, _, _, tmp, xi = work
    _drift_into(b, w, ti, tj, strength, g, tr, k1)
    if sigma > 0.0:
        s0, s1 = _tangent_noise_into(b, xi, s0, s1)
        amp = math.sqrt(h) * sigma
        for n in range(b.size):
            tmp[n] = b[n] + h * k1[n] + amp * xi[n]
    else:
        for n in range(b.size):
            tmp[n] = b[n] + h * k1[n]
    return _project_into(tmp, out), s0, s1


@nb.njit(inline="always")
def _jitter_into(b, sigma0, work, out, s0, s1):
    tmp = work[6]
    xi = work[7]
    if sigma0 == 0.0:
        for n in range(b.size):
            out[n] = b[n]
        return True, s0, s1
    s0, s1 = _tangent_noise_into(b, xi, s0, s1)
    for n in range(b.size):
        tmp[n] = b[n] + sigma0 * xi[n]
    return _project_into(tmp, out), s0, s1


@nb.njit(cache=True, nogil=True)
def _drift_kernel(b, w, ti, tj, strength, out):
    work = _alloc_work(b.size)
    _drift_into(b, w, ti, tj, strength, work[0], work[1], out)


@nb.njit(cache=True, nogil=True)
def _rk4_kernel(b, h, w, ti, tj, strength, out):
    return _rk4_into(b, h, w, ti, tj, strength, _alloc_work(b.size), out)


@nb.njit(cache=True, nogil=True)
def _em_kernel(b, h, sigma, w, ti, tj, strength, out, s0, s1):
    return _em_into(b, h, sigma, w, ti, tj, strength, _alloc_work(b.size), out, s0, s1)


@nb.njit(cache=True, nogil=True)
def _jitter_kernel(b, sigma0, out, s0, s1):
    return _jitter_into(b, sigma0, _alloc_work(b.size), out, s0, s1)


@nb.njit(cache=True, nogil=True)
def _run(b0, w, ti, tj, strength, h, sigma, sigma0, eps, kmax, s0, s1, rec, fvals):
    """Returns ``(code, steps, s0, s1, b_end)``; records every state when
    ``rec`` has rows."""
    N = b0.size
    work = _alloc_work(N)
    b = np.empty(N)
    nxt = np.empty(N)
    ok, s0, s1 = _jitter_into(b0, sigma0, work, b, s0, s1)
    if not ok:
        return FAILED, 0, s0, s1, b0.copy()
    record = rec.shape[0] > 0
    lim = 1.0 - eps
    k = 0
    while True:
        if record:
            for n in range(N):
                rec[k, n] = b[n]
            fvals[k] = _quartic_value(b, w)
        imax = 0
        for n in range(1, N):
            if b[n] > b[imax]:
                imax = n
        if b[imax] >= lim:
            return imax, k, s0, s1, b
        if k >= kmax:
            return CENSORED, k, s0, s1, b
        if sigma > 0.0:
            ok, s0, s1 = _em_into(b, h, sigma, w, ti, tj, strength, work, nxt, s0, s1)
        else:
            ok = _rk4_into(b, h, w, ti, tj, strength, work, nxt)
        if not ok:
            return FAILED, k, s0, s1, b
        for n in range(N):
            b[n] = nxt[n]
        k += 1


@nb.njit(cache=True, nogil=True)
def _run_chunk(b0, w, ti, tj, strength, h, sigma, sigma0, eps, kmax, states, codes, steps, lo, hi):
    rec = np.empty((0, b0.size))
    fvals = np.empty(0)
    for t in range(lo, hi):
        code, k, s0, s1, _ = _run(
            b0, w, ti, tj, strength, h, sigma, sigma0, eps, kmax, states[t, 0], states[t, 1], rec, fvals
        )
        codes[t] = code
        steps[t] = k


# public API ---------------------------------------------------------------


def _as_bpoint(b):
    return b if isinstance(b, BPoint) else BPoint(b)


def drift(cfg, b):
    """Right-hand side ``-grad_S f(b) + w(b)``; tangent at ``b``."""
    b = _as_bpoint(b)
    w, ti, tj, strength = cfg.kernel_args(b.dim)
    out = np.empty(b.dim)
    _drift_kernel(b.b, w, ti, tj, strength, out)
    return TangentVector(out, b)


def step_deterministic(cfg, b):
    """One RK4 step of size ``cfg.step_size`` followed by the retraction."""
    b = _as_bpoint(b)
    w, ti, tj, strength = cfg.kernel_args(b.dim)
    out = np.empty(b.dim)
    if not _rk4_kernel(b.b, cfg.step_size, w, ti, tj, strength, out):
        raise ProjectionError("RK4 step produced a vector that cannot be projected")
    return BPoint(out)


def step_stochastic(cfg, b, rng):
    """One Euler-Maruyama step ``b + h drift + sqrt(h) sigma xi_T``, then the
    retraction. Advances ``rng`` (a :class:`~collapse_lab.streams.Stream`)
    by ``N`` normal draws when ``sigma > 0``."""
    b = _as_bpoint(b)
    w, ti, tj, strength = cfg.kernel_args(b.dim)
    out = np.empty(b.dim)
    ok, s0, s1 = _em_kernel(
        b.b, cfg.step_size, cfg.noise.continuous_sigma, w, ti, tj, strength, out, rng.state[0], rng.state[1]
    )
    rng.state[:] = (s0, s1)
    if not ok:
        raise ProjectionError("Euler-Maruyama step produced a vector that cannot be projected")
    return BPoint(out)


def jitter_initial(b0, sigma0, rng):
    """Perturb ``b0`` by ``sigma0`` times a tangent standard normal vector."""
    b0 = _as_bpoint(b0)
    if sigma0 < 0.0:
        raise ValueError("sigma0 must be >= 0")
    out = np.empty(b0.dim)
    ok, s0, s1 = _jitter_kernel(b0.b, float(sigma0), out, rng.state[0], rng.state[1])
    rng.state[:] = (s0, s1)
    if not ok:
        raise ProjectionError("jittered start cannot be projected")
    return BPoint(out)


def run_trajectory(cfg, b0, rng, record=True):
    """Integrate from ``b0`` until collapse or ``t_max``.

    The start is jittered once by ``cfg.noise.initial_jitter``; then steps are
    stochastic when ``continuous_sigma > 0`` and RK4 otherwise. Collapse is
    declared at the first recorded time with ``max_n b_n >= 1 - collapse_eps``.

    With ``record=False`` only the first and last states are kept.
    """
    b0 = _as_bpoint(b0)
    N = b0.dim
    w, ti, tj, strength = cfg.kernel_args(N)
    kmax = cfg.max_steps
    h = cfg.step_size
    rec = np.empty((kmax + 1 if record else 0, N))
    fvals = np.empty(kmax + 1 if record else 0)
    code, k, s0, s1, b_end = _run(
        b0.b, w, ti, tj, strength, h, cfg.noise.continuous_sigma, cfg.noise.initial_jitter,
        cfg.collapse_eps, kmax, rng.state[0], rng.state[1], rec, fvals,
    )
    rng.state[:] = (s0, s1)
    outcome = Outcome.from_code(code, k, h)
    if record:
        n = k + 1
        return Trajectory(np.arange(n) * h, rec[:n].copy(), fvals[:n].copy(), outcome)
    points = np.vstack([b0.b, b_end])
    f_values = np.array([_quartic_value(row, w) for row in points])
    return Trajectory(np.array([0.0, k * h]), points, f_values, outcome)


def run_trials(cfg, b0, master_seed, trials, prefix=(), workers=None):
    """Run ``trials`` independent trajectories without recording.

    Trial ``i`` uses ``Stream.for_trial(master_seed, i, prefix)``, so the
    result does not depend on ``workers``. Returns ``(codes, steps)``: codes
    are vertex indices, ``CENSORED`` or ``FAILED``.
    """
    b0 = _as_bpoint(b0)
    w, ti, tj, strength = cfg.kernel_args(b0.dim)
    states = trial_states(master_seed, trials, prefix)
    codes = np.empty(trials, dtype=np.int64)
    steps = np.empty(trials, dtype=np.int64)
    args = (
        b0.b, w, ti, tj, strength, cfg.step_size, cfg.noise.continuous_sigma,
        cfg.noise.initial_jitter, cfg.collapse_eps, cfg.max_steps, states, codes, steps,
    )
    run_chunked(lambda lo, hi: _run_chunk(*args, lo, hi), trials, workers)
    return codes, steps


def descent_check(traj, tol=DESCENT_TOL):
    """Check that ``f`` never increases by more than ``tol`` between records."""
    f = np.asarray(traj.f_values, dtype=float)
    worst = float(np.max(np.diff(f), initial=0.0))
    worst = max(worst, 0.0)
    return DescentReport(worst <= tol, worst, tol)
