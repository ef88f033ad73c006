"""Martingale diffusion on the probability simplex (reference oracle).

Each step applies ``dp_n = sqrt(h) sigma p_n (xi_n - sum_m p_m xi_m)``. The
increment has zero conditional mean, so every coordinate is a bounded
martingale and by optional stopping the process is absorbed at vertex ``n``
with probability exactly ``p_n(0)``. This gives the Born law a ground truth
that the gradient-flow ensembles can be compared against. It is an oracle,
not a model of the measurement process.

The increment only depends on ``xi`` through ``xi_n - sum_m p_m xi_m``, which
is unchanged when a common constant is added to every ``xi_n``. The kernels
therefore draw ``xi`` directly on the hyperplane orthogonal to ``(1, ..., 1)``
using ``N - 1`` normals in the Helmert basis: same law, one draw fewer.
"""
import math

import numba as nb
import numpy as np

from .dynamics import CENSORED, Outcome
from .state_space import SimplexPoint
from .streams import next_normal, run_chunked, trial_states

__all__ = [
    "martingale_increment",
    "martingale_step",
    "run_martingale",
    "run_martingale_trials",
]

# above this deviation of the pre-normalization sum, divide instead of
# using the first-order reciprocal 2 - s (exact to rounding below it)
_RENORM_EXACT = 1e-8


@nb.njit(inline="always")
def _renorm_factor(total, clamped):
    if clamped or abs(total - 1.0) > _RENORM_EXACT:
        return 1.0 / total
    return 2.0 - total


@nb.njit(cache=True, nogil=True)
def _run2(a, c, lim, kmax, check, s0, s1):
    # two-level case in closed form: xi = (z, -z)/sqrt(2) gives
    # dp_0 = -dp_1 = c z p_0 p_1 with c = sqrt(2 h) sigma. Only p_0 is
    # carried; p_1 = 1 - p_0 keeps the pair on the simplex, so the
    # renormalization is exact and the step reduces to a clamp.
    nclamp = 0
    k = 0
    while True:
        b = 1.0 - a
        if check:
            if a >= lim:
                return 0, k, nclamp, a, s0, s1
            if b >= lim:
                return 1, k, nclamp, a, s0, s1
        if k >= kmax:
            return CENSORED, k, nclamp, a, s0, s1
        z, s0, s1 = next_normal(s0, s1)
        a += (c * z * a) * b
        if a < 0.0:
            a = 0.0
            nclamp += 1
        elif a > 1.0:
            a = 1.0
            nclamp += 1
        k += 1


@nb.njit(cache=True, nogil=True)
def _run3(p0, p1, p2, sc, lim, kmax, check, s0, s1):
    h1 = 1.0 / math.sqrt(2.0)
    h2 = 1.0 / math.sqrt(6.0)
    nclamp = 0
    k = 0
    while True:
        if check:
            if p0 >= lim:
                return 0, k, nclamp, p0, p1, p2, s0, s1
            if p1 >= lim:
                return 1, k, nclamp, p0, p1, p2, s0, s1
            if p2 >= lim:
                return 2, k, nclamp, p0, p1, p2, s0, s1
        if k >= kmax:
            return CENSORED, k, nclamp, p0, p1, p2, s0, s1
        z, s0, s1 = next_normal(s0, s1)
        c = z * h2
        x2 = -2.0 * c
        z, s0, s1 = next_normal(s0, s1)
        d = z * h1
        x1 = c - d
        x0 = c + d
        m = p0 * x0 + p1 * x1 + p2 * x2
        q0 = p0 + sc * p0 * (x0 - m)
        q1 = p1 + sc * p1 * (x1 - m)
        q2 = p2 + sc * p2 * (x2 - m)
        clamped = False
        if q0 < 0.0:
            q0 = 0.0
            clamped = True
        if q1 < 0.0:
            q1 = 0.0
            clamped = True
        if q2 < 0.0:
            q2 = 0.0
            clamped = True
        inv = _renorm_factor(q0 + q1 + q2, clamped)
        p0 = q0 * inv
        p1 = q1 * inv
        p2 = q2 * inv
        nclamp += clamped
        k += 1


@nb.njit(cache=True, nogil=True)
def _advance(p0, sc, eps, kmax, check, s0, s1, p):
    """Step from ``p0`` into ``p`` until collapse (when ``check``) or ``kmax``
    steps. Returns ``(code, steps, clamped_steps, s0, s1)``.

    The step is written out flat: passing arrays to helpers inside this loop
    costs reference-count traffic on every call.
    """
    n = p0.size
    lim = 1.0 - eps
    if n == 2:
        code, k, nclamp, a, s0, s1 = _run2(p0[0], sc * math.sqrt(2.0), lim, kmax, check, s0, s1)
        p[0] = a
        p[1] = 1.0 - a
        return code, k, nclamp, s0, s1
    if n == 3:
        code, k, nclamp, a, b, c, s0, s1 = _run3(p0[0], p0[1], p0[2], sc, lim, kmax, check, s0, s1)
        p[0] = a
        p[1] = b
        p[2] = c
        return code, k, nclamp, s0, s1
    for i in range(n):
        p[i] = p0[i]
    helm = np.empty(n)
    for j in range(1, n):
        helm[j] = 1.0 / math.sqrt(j * (j + 1.0))
    xi = np.empty(n)
    nclamp = 0
    k = 0
    while True:
        if check:
            imax = 0
            for i in range(1, n):
                if p[i] > p[imax]:
                    imax = i
            if p[imax] >= lim:
                return imax, k, nclamp, s0, s1
        if k >= kmax:
            return CENSORED, k, nclamp, s0, s1
        tail = 0.0
        for j in range(n - 1, 0, -1):
            z, s0, s1 = next_normal(s0, s1)
            c = z * helm[j]
            xi[j] = tail - j * c
            tail += c
        xi[0] = tail
        m = 0.0
        for i in range(n):
            m += p[i] * xi[i]
        clamped = False
        total = 0.0
        for i in range(n):
            q = p[i] + sc * p[i] * (xi[i] - m)
            if q < 0.0:
                q = 0.0
                clamped = True
            p[i] = q
            total += q
        inv = _renorm_factor(total, clamped)
        for i in range(n):
            p[i] *= inv
        nclamp += clamped
        k += 1


@nb.njit(cache=True, nogil=True)
def _increments(p, sc, count, s0, s1):
    # rows are consecutive raw increments from the same state p
    n = p.size
    dp = np.empty((count, n))
    xi = np.empty(n)
    c2 = sc * math.sqrt(2.0)
    for r in range(count):
        if n == 2:
            z, s0, s1 = next_normal(s0, s1)
            d = (c2 * z) * (p[0] * p[1])
            dp[r, 0] = d
            dp[r, 1] = -d
            continue
        tail = 0.0
        for j in range(n - 1, 0, -1):
            z, s0, s1 = next_normal(s0, s1)
            c = z * (1.0 / math.sqrt(j * (j + 1.0)))
            xi[j] = tail - j * c
            tail += c
        xi[0] = tail
        m = 0.0
        for i in range(n):
            m += p[i] * xi[i]
        for i in range(n):
            dp[r, i] = sc * p[i] * (xi[i] - m)
    return dp, s0, s1


@nb.njit(cache=True, nogil=True)
def _run_chunk(p0, sc, eps, kmax, states, codes, steps, clamps, lo, hi):
    p = np.empty(p0.size)
    for t in range(lo, hi):
        code, k, nclamp, s0, s1 = _advance(p0, sc, eps, kmax, True, states[t, 0], states[t, 1], p)
        codes[t] = code
        steps[t] = k
        clamps[t] = nclamp


def _as_simplex(p):
    return p if isinstance(p, SimplexPoint) else SimplexPoint(p)


def _check_rates(h, sigma):
    if not h > 0.0 or not sigma > 0.0:
        raise ValueError("step size and sigma must both be > 0")


def martingale_increment(p, h, sigma, rng, size=None):
    """Raw increment ``dp`` before clamping; sums to zero up to rounding.

    With ``size`` given, returns ``size`` independent increments from the
    same ``p`` as rows of a ``(size, N)`` array.
    """
    p = _as_simplex(p)
    _check_rates(h, sigma)
    count = 1 if size is None else int(size)
    dp, s0, s1 = _increments(p.p, math.sqrt(h) * sigma, count, rng.state[0], rng.state[1])
    rng.state[:] = (s0, s1)
    return dp[0] if size is None else dp


def martingale_step(p, h, sigma, rng):
    """One step of the martingale diffusion: increment, clamp at zero,
    renormalize."""
    p = _as_simplex(p)
    _check_rates(h, sigma)
    out = np.empty(p.dim)
    _, _, _, s0, s1 = _advance(p.p, math.sqrt(h) * sigma, 0.25, 1, False, rng.state[0], rng.state[1], out)
    rng.state[:] = (s0, s1)
    return SimplexPoint(out)


def run_martingale(p0, h, sigma, collapse_eps, t_max, rng):
    """Iterate :func:`martingale_step` until ``max_n p_n >= 1 - collapse_eps``
    or ``t_max``."""
    p0 = _as_simplex(p0)
    _check_rates(h, sigma)
    kmax = int(math.floor(t_max / h + 1e-9))
    out = np.empty(p0.dim)
    code, k, _, s0, s1 = _advance(
        p0.p, math.sqrt(h) * sigma, float(collapse_eps), kmax, True, rng.state[0], rng.state[1], out
    )
    rng.state[:] = (s0, s1)
    return Outcome.from_code(code, k, h)


def run_martingale_trials(p0, h, sigma, collapse_eps, t_max, master_seed, trials, prefix=(), workers=None):
    """Independent martingale trials; returns ``(codes, steps, clamped_steps)``.

    Trial ``i`` reproduces ``run_martingale`` with
    ``Stream.for_trial(master_seed, i, prefix)``.
    """
    p0 = _as_simplex(p0)
    _check_rates(h, sigma)
    kmax = int(math.floor(t_max / h + 1e-9))
    states = trial_states(master_seed, trials, prefix)
    codes = np.empty(trials, dtype=np.int64)
    steps = np.empty(trials, dtype=np.int64)
    clamps = np.empty(trials, dtype=np.int64)
    args = (p0.p, math.sqrt(h) * sigma, float(collapse_eps), kmax, states, codes, steps, clamps)
    run_chunked(lambda lo, hi: _run_chunk(*args, lo, hi), trials, workers)
    return codes, steps, clamps
