"""Per-trial random streams.

Every trial owns an independent xoroshiro128++ stream whose 128-bit state is
derived from ``(master_seed, *key)`` through :class:`numpy.random.SeedSequence`
spawn keys. Outcomes therefore depend only on the master seed and the trial
index, never on how trials are distributed over workers.

Normal variates come from a 256-layer ziggurat. The generator and sampler are
compiled with numba and pass their state as two ``uint64`` scalars so the hot
integration loops can keep it in registers.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from math import exp, log

import numba as nb
import numpy as np
from numba import int64 as i64
from numba import uint64 as u64

__all__ = ["Stream", "trial_states", "worker_count", "run_chunked"]

_TWO52 = 1.0 / 4503599627370496.0
_TWO53 = 1.0 / 9007199254740992.0


def _ziggurat_tables(n=256, r=3.6541528853610088, v=4.92867323399e-3):
    x = np.zeros(n + 1)
    x[0] = v / np.exp(-0.5 * r * r)
    x[1] = r
    for i in range(2, n):
        x[i] = np.sqrt(-2.0 * np.log(v / x[i - 1] + np.exp(-0.5 * x[i - 1] ** 2)))
    f = np.exp(-0.5 * x**2)
    return x, f, x[1:] / x[:-1]


_ZX, _ZF, _ZR = _ziggurat_tables()


@nb.njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (u64(64) - k))


@nb.njit(inline="always")
def next_u64(s0, s1):
    """One xoroshiro128++ output. Returns ``(value, s0, s1)``."""
    r = _rotl(s0 + s1, u64(17)) + s0
    s1 ^= s0
    return r, _rotl(s0, u64(49)) ^ s1 ^ (s1 << u64(21)), _rotl(s1, u64(28))


@nb.njit(inline="always")
def next_uniform(s0, s1):
    u, s0, s1 = next_u64(s0, s1)
    return float(i64(u >> u64(11))) * _TWO53, s0, s1


@nb.njit(cache=True, nogil=True)
def _normal_slow(s0, s1, i, x):
    # wedge and tail rejection; rare (~1% of draws)
    while True:
        if i == 0:
            r = _ZX[1]
            while True:
                a, s0, s1 = next_uniform(s0, s1)
                b, s0, s1 = next_uniform(s0, s1)
                xx = -log(1.0 - a) / r
                yy = -log(1.0 - b)
                if yy + yy > xx * xx:
                    break
            if x > 0.0:
                return r + xx, s0, s1
            return -(r + xx), s0, s1
        c, s0, s1 = next_uniform(s0, s1)
        if _ZF[i + 1] + (_ZF[i] - _ZF[i + 1]) * c < exp(-0.5 * x * x):
            return x, s0, s1
        u, s0, s1 = next_u64(s0, s1)
        i = i64(u & u64(0xFF))
        fr = float(i64(u >> u64(12))) * _TWO52
        x = fr * _ZX[i] * (1.0 - 2.0 * float(i64((u >> u64(8)) & u64(1))))
        if fr < _ZR[i]:
            return x, s0, s1


@nb.njit(inline="always")
def next_normal(s0, s1):
    """Standard normal draw. Returns ``(z, s0, s1)``."""
    u, s0, s1 = next_u64(s0, s1)
    i = i64(u & u64(0xFF))
    fr = float(i64(u >> u64(12))) * _TWO52
    # branch-free sign from bit 8
    x = fr * _ZX[i] * (1.0 - 2.0 * float(i64((u >> u64(8)) & u64(1))))
    if fr < _ZR[i]:
        return x, s0, s1
    return _normal_slow(s0, s1, i, x)


@nb.njit(cache=True, nogil=True)
def _fill_normal(state, out):
    s0 = state[0]
    s1 = state[1]
    for k in range(out.size):
        out[k], s0, s1 = next_normal(s0, s1)
    state[0] = s0
    state[1] = s1


@nb.njit(cache=True, nogil=True)
def _fill_uniform(state, out):
    s0 = state[0]
    s1 = state[1]
    for k in range(out.size):
        out[k], s0, s1 = next_uniform(s0, s1)
    state[0] = s0
    state[1] = s1


def _seed_state(master_seed, key):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    state = ss.generate_state(2, np.uint64)
    if not state.any():
        state[0] = 1
    return state


class Stream:
    """A random stream owned by a single trial.

    Parameters
    ----------
    state : array_like of uint64, shape (2,)
        Raw generator state. Use :meth:`from_seed` or :meth:`for_trial`
        rather than constructing states by hand.
    """

    __slots__ = ("state",)

    def __init__(self, state):
        state = np.array(state, dtype=np.uint64).reshape(2)
        if not state.any():
            raise ValueError("all-zero state is a fixed point of xoroshiro128++")
        self.state = state

    @classmethod
    def from_seed(cls, seed):
        return cls(_seed_state(seed, ()))

    @classmethod
    def for_trial(cls, master_seed, trial, prefix=()):
        """Stream of trial ``trial`` under ``master_seed``.

        ``prefix`` namespaces independent experiments sharing a master seed,
        e.g. the grid points of a scan.
        """
        return cls(_seed_state(master_seed, (*prefix, trial)))

    def standard_normal(self, size=None):
        out = np.empty(1 if size is None else size)
        _fill_normal(self.state, out.reshape(-1))
        return float(out[0]) if size is None else out

    def random(self, size=None):
        out = np.empty(1 if size is None else size)
        _fill_uniform(self.state, out.reshape(-1))
        return float(out[0]) if size is None else out

    def copy(self):
        return Stream(self.state.copy())

    def __repr__(self):
        return f"Stream(state=[{self.state[0]:#x}, {self.state[1]:#x}])"


def trial_states(master_seed, trials, prefix=()):
    """Stacked ``(trials, 2)`` uint64 states, row ``i`` equal to
    ``Stream.for_trial(master_seed, i, prefix).state``."""
    out = np.empty((trials, 2), dtype=np.uint64)
    for i in range(trials):
        out[i] = _seed_state(master_seed, (*prefix, i))
    return out


def worker_count(requested=None):
    """Resolve the worker count; ``COLLAPSE_LAB_THREADS`` wins over ``requested``.
    Zero means one worker per CPU."""
    env = os.environ.get("COLLAPSE_LAB_THREADS")
    n = int(env) if env not in (None, "") else (requested or 0)
    if n < 0:
        raise ValueError("worker count must be >= 0")
    return n or (os.cpu_count() or 1)


def run_chunked(fn, n_items, workers=None):
    """Call ``fn(lo, hi)`` over contiguous chunks of ``range(n_items)``.

    ``fn`` must release the GIL (numba ``nogil``) for threads to help, and
    must write each item's result into its own slot so the result is
    independent of the chunking.
    """
    workers = min(worker_count(workers), max(n_items, 1))
    if workers <= 1:
        fn(0, n_items)
        return
    bounds = np.linspace(0, n_items, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for fut in futures:
            fut.result()
