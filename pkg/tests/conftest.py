import time
from typing import NamedTuple

import numpy as np
import pytest

from collapse_lab.reference_dynamics import run_martingale_trials


def unit_vectors(rng, N, count):
    """Random points of S+ (absolute values of Gaussian directions)."""
    b = np.abs(rng.standard_normal((count, N)))
    return b / np.linalg.norm(b, axis=1, keepdims=True)


class Ensemble(NamedTuple):
    codes: np.ndarray
    steps: np.ndarray
    clamps: np.ndarray
    seconds: float


def _timed(p0, seed):
    t0 = time.perf_counter()
    codes, steps, clamps = run_martingale_trials(p0, 1e-3, 0.5, 1e-6, 200.0, seed, 100_000)
    return Ensemble(codes, steps, clamps, time.perf_counter() - t0)


# The two large martingale ensembles are shared between the unit tests and
# the acceptance module so each runs once per session.

@pytest.fixture(scope="session")
def martingale_two_level():
    return _timed((0.3, 0.7), 42)


@pytest.fixture(scope="session")
def martingale_three_level():
    return _timed((0.2, 0.3, 0.5), 43)


# acceptance report: one line per criterion, printed after the run

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def add(criterion, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
        print(ACCEPTANCE_LINES[-1])
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
