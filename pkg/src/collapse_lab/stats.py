"""Collapse-frequency statistics.

Ensembles of independent trials are reduced to per-vertex counts, Wilson
score intervals and a Pearson goodness-of-fit test against the Born
reference ``p_n = |c_n|**2``. For two-level systems a scan over the initial
weight ``x = b_0(0)**2`` tests the pairing identity
``P(x) + P(1 - x) = 1`` and fits ``P(x)`` with a straight line.

Censored and failed trials are reported but never counted as collapses;
frequencies are conditional on collapse.
"""
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .dynamics import CENSORED, FAILED, DynamicsConfig, run_trials
from .reference_dynamics import run_martingale_trials
from .state_space import AmplitudeVector, BPoint, SimplexPoint

__all__ = [
    "MODELS",
    "CollapseStats",
    "LinearFit",
    "ScanResult",
    "born_reference",
    "wilson_interval",
    "chi_square_gof",
    "chi_square_sf",
    "gamma_q",
    "check_grid",
    "summarize",
    "run_ensemble",
    "symmetry_scan",
    "fit_line",
]

MODELS = ("gradient_flow", "martingale")
DEFAULT_LEVEL = 0.99
#: censored share above which a chi-square result is flagged
CENSOR_FLAG = 0.01
#: expected count below which cells are pooled before the chi-square test
POOL_MIN = 5.0


def _z(level):
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level!r}")
    return NormalDist().inv_cdf(0.5 + 0.5 * level)


def born_reference(c):
    """Born weights ``|c_n|**2`` of a coefficient vector."""
    if not isinstance(c, AmplitudeVector):
        c = AmplitudeVector(c)
    p = np.abs(c.c) ** 2
    return SimplexPoint(p / p.sum())


def wilson_interval(successes, n, level=DEFAULT_LEVEL):
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= successes <= n:
        raise ValueError(f"need 0 <= successes <= n and n >= 1, got ({successes}, {n})")
    z = _z(level)
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (phat + z2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z2 / (4 * n * n)) / denom
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == n else min(1.0, centre + half)
    return low, high


# regularized upper incomplete gamma Q(a, x) --------------------------------

_GAMMA_EPS = 1e-15
_GAMMA_ITMAX = 10_000
_TINY = 1e-300


def _lower_series(a, x):
    # P(a, x) by its power series; converges quickly for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a, x):
    # Q(a, x) by its continued fraction (modified Lentz); for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a, x):
    """Regularized upper incomplete gamma function ``Q(a, x)``."""
    if a <= 0.0 or x < 0.0:
        raise ValueError("need a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return _upper_fraction(a, x)


def chi_square_sf(stat, dof):
    """Upper tail ``P(X >= stat)`` of the chi-square distribution."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if stat <= 0.0:
        return 1.0
    return gamma_q(0.5 * dof, 0.5 * stat)


def _pool(observed, expected):
    # merge cells with expected count < POOL_MIN, smallest first, until every
    # remaining cell is large enough or only one cell is left
    cells = sorted(zip(expected.tolist(), observed.tolist()))
    while len(cells) > 1 and cells[0][0] < POOL_MIN:
        e0, o0 = cells.pop(0)
        e1, o1 = cells.pop(0)
        cells.append((e0 + e1, o0 + o1))
        cells.sort()
    return np.array([o for _, o in cells]), np.array([e for e, _ in cells])


def chi_square_gof(counts, expected_p):
    """Pearson goodness-of-fit test of ``counts`` against ``expected_p``.

    Cells with zero expected probability are dropped (a count there makes the
    statistic infinite); cells with expected count below 5 are pooled.
    Returns ``(statistic, dof, p_value)``; ``dof = cells - 1`` after pooling.
    A single remaining cell gives ``(0.0, 0, 1.0)``.
    """
    counts = np.asarray(counts, dtype=float)
    expected_p = np.asarray(expected_p, dtype=float)
    if counts.shape != expected_p.shape:
        raise ValueError("counts and expected probabilities differ in length")
    if np.any(counts < 0) or np.any(expected_p < 0):
        raise ValueError("counts and probabilities must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("all-zero counts")
    zero = expected_p == 0.0
    if np.any(counts[zero] > 0):
        return math.inf, int(np.count_nonzero(~zero)), 0.0
    p = expected_p[~zero] / expected_p[~zero].sum()
    observed, expected = _pool(counts[~zero], total * p)
    dof = observed.size - 1
    if dof == 0:
        return 0.0, 0, 1.0
    stat = float(np.sum((observed - expected) ** 2 / expected))
    return stat, dof, chi_square_sf(stat, dof)


@dataclass(frozen=True, eq=False)
class CollapseStats:
    """Reduced outcome of an ensemble.

    ``frequencies`` and the intervals are conditional on collapse; when no
    trial collapsed they are NaN and ``[0, 1]``. ``clamped_fraction`` is the
    share of martingale steps that hit the simplex boundary (``None`` for the
    gradient flow).
    """

    trials: int
    counts: list
    censored: int
    failed: int
    frequencies: list
    ci_low: list
    ci_high: list
    born: list
    chi_square: float
    chi_square_dof: int
    p_value: float
    ci_level: float = DEFAULT_LEVEL
    clamped_fraction: float = None
    mean_collapse_steps: float = None

    def __post_init__(self):
        if sum(self.counts) + self.censored + self.failed != self.trials:
            raise ValueError("counts, censored and failed do not add up to trials")

    @property
    def collapsed(self):
        return sum(self.counts)

    @property
    def censored_fraction(self):
        return self.censored / self.trials

    @property
    def censored_flag(self):
        """True when censoring is large enough to bias the comparison."""
        return self.censored / self.trials > CENSOR_FLAG

    def raw_fractions(self):
        """Fractions over all trials: ``counts / trials``, censored, failed.
        They sum to one."""
        t = self.trials
        return [c / t for c in self.counts], self.censored / t, self.failed / t

    def to_dict(self):
        return {
            "trials": self.trials,
            "counts": list(self.counts),
            "censored": self.censored,
            "failed": self.failed,
            "frequencies": list(self.frequencies),
            "ci_level": self.ci_level,
            "ci_low": list(self.ci_low),
            "ci_high": list(self.ci_high),
            "born": list(self.born),
            "chi_square": self.chi_square,
            "dof": self.chi_square_dof,
            "p_value": self.p_value,
            "censored_flag": self.censored_flag,
            "clamped_fraction": self.clamped_fraction,
            "mean_collapse_steps": self.mean_collapse_steps,
        }


def summarize(codes, born, level=DEFAULT_LEVEL, steps=None, clamps=None):
    """Reduce per-trial outcome codes to :class:`CollapseStats`.

    ``codes`` holds vertex indices, ``CENSORED`` or ``FAILED``; ``born`` is the
    reference distribution (its length fixes the number of vertices).
    """
    codes = np.asarray(codes, dtype=np.int64)
    born = np.asarray(born, dtype=float)
    N = born.size
    trials = int(codes.size)
    if trials < 1:
        raise ValueError("need at least one trial")
    if np.any((codes < FAILED) | (codes >= N)):
        raise ValueError("outcome code out of range")
    hit = codes >= 0
    counts = np.bincount(codes[hit], minlength=N)
    n = int(counts.sum())
    if n > 0:
        freq = (counts / n).tolist()
        ci = [wilson_interval(int(k), n, level) for k in counts]
        stat, dof, pval = chi_square_gof(counts, born)
    else:
        freq = [math.nan] * N
        ci = [(0.0, 1.0)] * N
        stat, dof, pval = math.nan, 0, math.nan
    mean_steps = clamped = None
    if steps is not None:
        steps = np.asarray(steps, dtype=np.int64)
        if n > 0:
            mean_steps = float(steps[hit].mean())
        if clamps is not None and steps.sum() > 0:
            clamped = float(np.sum(clamps) / steps.sum())
    return CollapseStats(
        trials=trials,
        counts=[int(k) for k in counts],
        censored=int(np.count_nonzero(codes == CENSORED)),
        failed=int(np.count_nonzero(codes == FAILED)),
        frequencies=freq,
        ci_low=[lo for lo, _ in ci],
        ci_high=[hi for _, hi in ci],
        born=born.tolist(),
        chi_square=stat,
        chi_square_dof=dof,
        p_value=pval,
        ci_level=level,
        clamped_fraction=clamped,
        mean_collapse_steps=mean_steps,
    )


def _as_simplex(start):
    if isinstance(start, SimplexPoint):
        return start
    if isinstance(start, BPoint):
        p = start.b**2
        return SimplexPoint(p / p.sum())
    if isinstance(start, AmplitudeVector):
        return born_reference(start)
    return SimplexPoint(start)


def _as_bpoint(start):
    if isinstance(start, BPoint):
        return start
    if isinstance(start, SimplexPoint):
        b = np.sqrt(start.p)
        return BPoint(b / np.linalg.norm(b))
    if isinstance(start, AmplitudeVector):
        return BPoint(np.abs(start.c))
    return BPoint(start)


def run_ensemble(model, cfg, start, trials, master_seed, level=DEFAULT_LEVEL, prefix=(), workers=None):
    """Run ``trials`` independent trials and reduce them.

    ``start`` is a :class:`BPoint`, :class:`SimplexPoint` or
    :class:`AmplitudeVector`; it is converted to whichever coordinates
    ``model`` integrates in. The martingale model reads ``step_size``,
    ``t_max``, ``collapse_eps`` and ``noise.continuous_sigma`` from ``cfg``.
    Results depend only on ``master_seed`` and ``prefix``, not on
    ``workers``.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    if int(trials) < 1:
        raise ValueError("trials must be >= 1")
    trials = int(trials)
    cfg = cfg if cfg is not None else DynamicsConfig()
    p0 = _as_simplex(start)
    if model == "martingale":
        codes, steps, clamps = run_martingale_trials(
            p0, cfg.step_size, cfg.noise.continuous_sigma, cfg.collapse_eps, cfg.t_max,
            master_seed, trials, prefix, workers,
        )
        return summarize(codes, p0.p, level, steps, clamps)
    codes, steps = run_trials(cfg, _as_bpoint(start), master_seed, trials, prefix, workers)
    return summarize(codes, p0.p, level, steps)


@dataclass(frozen=True)
class LinearFit:
    """Ordinary least squares ``y = slope x + intercept`` with standard errors.

    ``max_residual`` is measured against the fitted line and
    ``max_born_deviation`` against the line ``y = x``.
    """

    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    max_residual: float
    max_born_deviation: float


def fit_line(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2 or np.ptp(x) == 0.0:
        raise ValueError("need at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        slope_se = math.sqrt(s2 / sxx)
        intercept_se = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
    else:
        slope_se = intercept_se = math.nan
    return LinearFit(
        slope, intercept, slope_se, intercept_se,
        float(np.max(np.abs(resid))), float(np.max(np.abs(y - x))),
    )


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Two-level scan over ``x = b_0(0)**2``.

    ``pairs[k] = (x, 1 - x)`` with ``x <= 0.5``; ``symmetry_residuals[k]`` is
    ``|P(x) + P(1 - x) - 1|`` and ``symmetry_bounds[k]`` its confidence bound
    ``z sqrt(var P(x) + var P(1 - x))``. Grid points whose ensemble raised
    are listed in ``errors`` and give NaN entries.
    """

    grid: list
    stats: list
    pairs: list
    symmetry_residuals: list
    symmetry_bounds: list
    linear_fit: LinearFit = None
    ci_level: float = DEFAULT_LEVEL
    errors: dict = field(default_factory=dict)

    @property
    def p1_hat(self):
        return [s.frequencies[0] if s is not None else math.nan for s in self.stats]

    @property
    def symmetric(self):
        """Every residual lies within its bound."""
        return all(r <= b for r, b in zip(self.symmetry_residuals, self.symmetry_bounds))


_GRID_TOL = 1e-9


def _partner_index(grid):
    partner = []
    for x in grid:
        j = int(np.argmin(np.abs(grid - (1.0 - x))))
        if abs(grid[j] - (1.0 - x)) > _GRID_TOL:
            raise ValueError(f"grid is not closed under x -> 1 - x: no partner for {float(x)!r}")
        partner.append(j)
    return partner


def check_grid(grid):
    """Validate a scan grid; returns it as a float array."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a non-empty list of numbers")
    if np.any((grid <= 0.0) | (grid >= 1.0)):
        raise ValueError("grid values must lie strictly between 0 and 1")
    if np.unique(grid).size != grid.size:
        raise ValueError("grid values must be distinct")
    _partner_index(grid)
    return grid


def _variance(s):
    n = s.collapsed
    if n == 0:
        return math.nan
    f = s.frequencies[0]
    return f * (1.0 - f) / n


def symmetry_scan(model, cfg, grid, trials, master_seed, level=DEFAULT_LEVEL, workers=None):
    """Run one two-level ensemble per grid value ``x`` from
    ``b0 = (sqrt(x), sqrt(1 - x))``.

    Grid point ``k`` uses trial streams under the prefix ``(k,)``.
    """
    grid = check_grid(grid)
    partner = _partner_index(grid)
    z = _z(level)
    stats, errors = [], {}
    for k, x in enumerate(grid):
        try:
            stats.append(run_ensemble(model, cfg, SimplexPoint([x, 1.0 - x]), trials, master_seed, level, (k,), workers))
        except (ValueError, ArithmeticError) as exc:
            stats.append(None)
            errors[float(x)] = str(exc)
    pairs, resid, bounds = [], [], []
    for k, x in enumerate(grid):
        j = partner[k]
        if x > grid[j]:
            continue
        pairs.append((float(x), float(grid[j])))
        a, b = stats[k], stats[j]
        if a is None or b is None:
            resid.append(math.nan)
            bounds.append(math.nan)
            continue
        resid.append(abs(a.frequencies[0] + b.frequencies[0] - 1.0))
        # self-paired midpoint: the two terms are one estimate counted twice
        var = 4.0 * _variance(a) if j == k else _variance(a) + _variance(b)
        bounds.append(z * math.sqrt(var))
    ok = [k for k, s in enumerate(stats) if s is not None and s.collapsed > 0]
    fit = None
    if len({float(grid[k]) for k in ok}) >= 2:
        fit = fit_line(grid[ok], [stats[k].frequencies[0] for k in ok])
    return ScanResult(grid.tolist(), stats, pairs, resid, bounds, fit, level, errors)
