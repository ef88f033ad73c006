"""Geometry of the positive part of the unit sphere.

A state is a coefficient vector ``c`` (complex, unit norm). Its image on the
sphere is the b-point ``b_n = |c_n|``, and its image on the probability
simplex is ``p_n = b_n**2``. Collapse targets are the vertices ``e_n``.
"""
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "AmplitudeVector",
    "BPoint",
    "TangentVector",
    "SimplexPoint",
    "ProjectionError",
    "amplitudes_to_bpoint",
    "project_to_sphere",
    "tangent_project",
    "vertex",
    "bpoint_to_probabilities",
]

#: tolerance for freshly constructed or renormalized values
TIGHT_TOL = 1e-12
#: tolerance for values that have drifted through integration steps
DRIFT_TOL = 1e-9
#: below this norm a raw vector cannot be projected back onto the sphere
MIN_NORM = 1e-12


class ProjectionError(ValueError):
    """A raw vector could not be mapped back onto the sphere (zero or
    non-finite norm). Inside an integrator this means the run blew up."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AmplitudeVector:
    """Expansion coefficients ``c_n`` of the microscopic state.

    The squared moduli must sum to one within ``DRIFT_TOL``; use
    :meth:`normalized` to rescale arbitrary coefficients.
    """

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("need a 1-D coefficient vector with at least 2 entries")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        norm2 = float(np.sum(np.abs(c) ** 2))
        if abs(norm2 - 1.0) > DRIFT_TOL:
            raise ValueError(f"sum |c_n|^2 = {norm2!r} deviates from 1 by more than {DRIFT_TOL}")
        object.__setattr__(self, "c", _frozen(c, complex))

    @classmethod
    def normalized(cls, c):
        c = np.asarray(c, dtype=complex)
        return cls(c / np.sqrt(np.sum(np.abs(c) ** 2)))

    @classmethod
    def from_polar(cls, moduli, phases=None):
        moduli = np.asarray(moduli, dtype=float)
        phases = np.zeros_like(moduli) if phases is None else np.asarray(phases, dtype=float)
        return cls(moduli * np.exp(1j * phases))

    @property
    def dim(self):
        return self.c.size

    def __len__(self):
        return self.c.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.c, dtype=dtype)


@dataclass(frozen=True, eq=False)
class BPoint:
    """Point of S+: real, unit norm, nonnegative components."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need a 1-D vector with at least 2 components")
        if not np.all(np.isfinite(b)):
            raise ValueError("components must be finite")
        if np.any(b < 0.0):
            raise ValueError("components of a point of S+ must be nonnegative")
        norm2 = float(b @ b)
        if abs(norm2 - 1.0) > DRIFT_TOL:
            raise ValueError(f"sum b_n^2 = {norm2!r} deviates from 1 by more than {DRIFT_TOL}")
        object.__setattr__(self, "b", _frozen(b))

    @property
    def dim(self):
        return self.b.size

    def __len__(self):
        return self.b.size

    def __getitem__(self, i):
        return self.b[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.b, dtype=dtype)

    def __repr__(self):
        return f"BPoint({np.array2string(self.b, precision=8, separator=', ')})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Vector ``v`` tangent to the sphere at ``base``."""

    v: np.ndarray
    base: BPoint

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != self.base.b.shape:
            raise ValueError("tangent vector and base point differ in dimension")
        resid = abs(float(self.base.b @ v))
        if resid > TIGHT_TOL * max(1.0, float(np.linalg.norm(v))):
            raise ValueError(f"not tangent: |base . v| = {resid:.3e}")
        object.__setattr__(self, "v", _frozen(v))

    @property
    def norm(self):
        return float(np.linalg.norm(self.v))

    def __len__(self):
        return self.v.size

    def __getitem__(self, i):
        return self.v[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.v, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """Probability vector: nonnegative entries summing to one."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("need a 1-D probability vector with at least 2 entries")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(float(p.sum()) - 1.0) > TIGHT_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", _frozen(p))

    @classmethod
    def normalized(cls, p):
        p = np.asarray(p, dtype=float)
        return cls(p / p.sum())

    @property
    def dim(self):
        return self.p.size

    def __len__(self):
        return self.p.size

    def __getitem__(self, i):
        return self.p[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.p, dtype=dtype)


def amplitudes_to_bpoint(c):
    """Initial b-point ``b_n = |c_n|`` of a coefficient vector."""
    if not isinstance(c, AmplitudeVector):
        c = AmplitudeVector(c)
    return BPoint(np.abs(c.c))


@nb.njit(inline="always")
def _project_into(v, out):
    # reflect then normalize; False signals a zero or non-finite norm
    s = 0.0
    for i in range(v.size):
        s += v[i] * v[i]
    norm = np.sqrt(s)
    if not (norm > 1e-12) or not np.isfinite(norm):
        return False
    inv = 1.0 / norm
    for i in range(v.size):
        out[i] = abs(v[i]) * inv
    return True


@nb.njit(inline="always")
def _tangent_project_into(b, v, out):
    bv = 0.0
    bb = 0.0
    for i in range(b.size):
        bv += b[i] * v[i]
        bb += b[i] * b[i]
    c = bv / bb
    for i in range(b.size):
        out[i] = v[i] - c * b[i]


def project_to_sphere(v):
    """Retraction onto S+: component-wise absolute value, then normalize.

    Raises
    ------
    ProjectionError
        If ``|v| <= 1e-12`` or ``v`` is not finite.
    """
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    if not _project_into(v, out):
        raise ProjectionError(f"cannot project vector with norm {np.linalg.norm(v)!r} onto the sphere")
    return BPoint(out)


def tangent_project(b, v):
    """Remove the radial part of ``v`` at ``b``: ``v - (b.v) b``.

    The radial coefficient is divided by ``b.b`` so the result stays tangent
    even for points that have drifted slightly off the unit sphere.
    """
    if not isinstance(b, BPoint):
        b = BPoint(b)
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    _tangent_project_into(b.b, v, out)
    return TangentVector(out, b)


def vertex(n0, N):
    """Collapse target with ``b_{n0} = 1`` (0-based index)."""
    if N < 2:
        raise ValueError("dimension must be at least 2")
    if not 0 <= n0 < N:
        raise IndexError(f"vertex index {n0} out of range for N={N}")
    b = np.zeros(N)
    b[n0] = 1.0
    return BPoint(b)


def bpoint_to_probabilities(b):
    """Simplex image ``p_n = b_n**2`` (renormalized to absorb drift)."""
    b = np.asarray(b, dtype=float)
    p = b * b
    return SimplexPoint(p / p.sum())
