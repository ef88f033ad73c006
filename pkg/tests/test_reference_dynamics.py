import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import helmert

from collapse_lab.dynamics import CENSORED, Outcome
from collapse_lab.reference_dynamics import (
    martingale_increment,
    martingale_step,
    run_martingale,
    run_martingale_trials,
)
from collapse_lab.state_space import SimplexPoint
from collapse_lab.stats import wilson_interval
from collapse_lab.streams import Stream

H, SIGMA = 1e-3, 0.5


def simplex_points(min_size=2, max_size=5):
    return st.integers(min_size, max_size).flatmap(
        lambda n: st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n)
    ).map(lambda v: np.array(v) / np.sum(v))


def reference_increment(p, h, sigma, z):
    # xi on the hyperplane orthogonal to (1, ..., 1) from N - 1 normals; the
    # kernel draws the coefficient of the last Helmert row first
    p = np.asarray(p)
    xi = helmert(p.size).T @ z[::-1]
    return math.sqrt(h) * sigma * p * (xi - p @ xi)


# single increments ---------------------------------------------------------


@pytest.mark.parametrize("p", [(0.3, 0.7), (0.2, 0.3, 0.5), (0.1, 0.2, 0.3, 0.4), (0.05,) * 4 + (0.8,)])
def test_increment_matches_reference_formula(p):
    rng = Stream.from_seed(3)
    z = rng.copy().standard_normal(len(p) - 1)
    dp = martingale_increment(p, H, SIGMA, rng)
    assert np.allclose(dp, reference_increment(p, H, SIGMA, z), rtol=0, atol=1e-15)


@settings(max_examples=100)
@given(simplex_points(), st.integers(0, 2**32))
def test_increment_sums_to_zero(p, seed):
    p = SimplexPoint(p / p.sum())
    dp = martingale_increment(p, H, SIGMA, Stream.from_seed(seed))
    assert abs(dp.sum()) <= 1e-16 * max(1.0, np.abs(dp).sum() * 1e3)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_vertex_is_absorbing(N):
    for n in range(N):
        e = np.eye(N)[n]
        assert np.array_equal(martingale_step(e, H, SIGMA, Stream.from_seed(n)).p, e)
        assert np.array_equal(martingale_increment(e, H, SIGMA, Stream.from_seed(n)), np.zeros(N))


@pytest.mark.parametrize("p", [(0.3, 0.7), (0.2, 0.3, 0.5)])
def test_one_step_drift_vanishes(p):
    n = 100_000
    dp = martingale_increment(p, H, SIGMA, Stream.from_seed(5), size=n)
    se = dp.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(dp.mean(axis=0)) <= 3 * se)


@pytest.mark.parametrize("p", [(0.3, 0.7), (0.2, 0.3, 0.5), (0.1, 0.2, 0.3, 0.4)])
def test_increment_covariance_matches_full_noise(p):
    # with N independent normals, Cov(dp) = h sigma^2 P (I - 1 p^T)(I - p 1^T) P;
    # drawing only N - 1 normals must give the same law
    p = np.asarray(p)
    N = p.size
    n = 100_000
    dp = martingale_increment(p, H, SIGMA, Stream.from_seed(8), size=n)
    A = np.diag(p) @ (np.eye(N) - np.outer(np.ones(N), p))
    target = H * SIGMA**2 * A @ A.T
    prod = np.einsum("ki,kj->kij", dp, dp)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(prod.mean(axis=0) - target) <= 3 * se + 1e-15)


def test_batched_increments_continue_the_stream():
    rng = Stream.from_seed(1)
    batch = martingale_increment((0.2, 0.3, 0.5), H, SIGMA, rng.copy(), size=3)
    single = [martingale_increment((0.2, 0.3, 0.5), H, SIGMA, rng) for _ in range(3)]
    assert np.array_equal(batch, np.array(single))


# steps ---------------------------------------------------------------------------------


@settings(max_examples=100)
@given(simplex_points(), st.integers(0, 2**32))
def test_step_stays_on_simplex(p, seed):
    rng = Stream.from_seed(seed)
    q = SimplexPoint(p / p.sum())
    for _ in range(20):
        q = martingale_step(q, H, SIGMA, rng)
    assert q.p.min() >= 0.0
    assert abs(q.p.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("p", [(0.3, 0.7), (0.2, 0.3, 0.5), (0.1, 0.2, 0.3, 0.4)])
def test_step_is_increment_then_renormalize(p):
    rng = Stream.from_seed(12)
    dp = martingale_increment(p, H, SIGMA, rng.copy())
    q = martingale_step(p, H, SIGMA, rng)
    assert np.allclose(q.p, np.asarray(p) + dp, rtol=0, atol=1e-15)


def test_large_steps_clamp_at_the_boundary():
    # h sigma^2 this large pushes small coordinates negative
    rng = Stream.from_seed(0)
    clamped = 0
    for _ in range(200):
        q = martingale_step((0.01, 0.99), 1.0, 50.0, rng)
        clamped += q.p[0] == 0.0 or q.p[1] == 0.0
        assert q.p.min() >= 0.0 and abs(q.p.sum() - 1) <= 1e-12
    assert clamped > 0


def test_rates_must_be_positive():
    with pytest.raises(ValueError):
        martingale_step((0.3, 0.7), 0.0, 0.5, Stream.from_seed(0))
    with pytest.raises(ValueError):
        run_martingale((0.3, 0.7), 1e-3, 0.0, 1e-6, 1.0, Stream.from_seed(0))


# runs ---------------------------------------------------------------------------------------


def test_vertex_start_collapses_immediately():
    assert run_martingale((1.0, 0.0), H, SIGMA, 1e-6, 200.0, Stream.from_seed(0)) == Outcome("collapsed", 0, 0.0)


def test_short_horizon_censors():
    assert run_martingale((0.5, 0.5), H, SIGMA, 1e-6, 0.01, Stream.from_seed(0)).kind == "censored"


@pytest.mark.parametrize("p0", [(0.3, 0.7), (0.2, 0.3, 0.5), (0.1, 0.2, 0.3, 0.4)])
def test_trials_replay_single_runs(p0):
    codes, steps, _ = run_martingale_trials(p0, 1e-2, SIGMA, 1e-6, 200.0, 4, 6, prefix=(3,))
    for i in range(6):
        oc = run_martingale(p0, 1e-2, SIGMA, 1e-6, 200.0, Stream.for_trial(4, i, prefix=(3,)))
        assert oc == Outcome.from_code(codes[i], steps[i], 1e-2)


def test_trials_independent_of_workers(monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_THREADS", raising=False)
    one = run_martingale_trials((0.2, 0.3, 0.5), 1e-2, SIGMA, 1e-6, 200.0, 6, 50, workers=1)
    four = run_martingale_trials((0.2, 0.3, 0.5), 1e-2, SIGMA, 1e-6, 200.0, 6, 50, workers=4)
    assert all(np.array_equal(a, b) for a, b in zip(one, four))


def _check_absorption(codes, p0):
    n = codes.size
    assert np.count_nonzero(codes == CENSORED) <= 0.001 * n
    hit = codes[codes >= 0]
    freq = np.bincount(hit, minlength=len(p0)) / hit.size
    for f, p in zip(freq, p0):
        se = math.sqrt(p * (1 - p) / hit.size)
        assert abs(f - p) <= 3 * se
        lo, hi = wilson_interval(int(round(f * hit.size)), hit.size, 0.99)
        assert lo <= p <= hi


def test_two_level_absorption(martingale_two_level):
    codes, steps, clamps, _ = martingale_two_level
    _check_absorption(codes, (0.3, 0.7))
    assert clamps.sum() / steps.sum() < 0.01


def test_three_level_absorption(martingale_three_level):
    codes, steps, clamps, _ = martingale_three_level
    _check_absorption(codes, (0.2, 0.3, 0.5))
    assert clamps.sum() / steps.sum() < 0.01


def test_four_level_absorption():
    # a coarser step keeps this affordable; the law is exact for any h
    codes, _, _ = run_martingale_trials((0.1, 0.2, 0.3, 0.4), 1e-2, SIGMA, 1e-6, 200.0, 44, 100_000)
    _check_absorption(codes, (0.1, 0.2, 0.3, 0.4))
