"""Vertex-well potentials on S+ and the transverse field.

The built-in family is the quartic vertex well ``f(b) = 1 - sum_n w_n b_n**4``:
even in every coordinate, zero at every vertex for unit weights, and maximal
at the symmetric point. The flow ``-grad_S f`` therefore relaxes every
generic start to a vertex.
"""
from dataclasses import dataclass

import numba as nb
import numpy as np

from .state_space import BPoint, TangentVector, _tangent_project_into

__all__ = [
    "FAMILIES",
    "TRANSVERSE_KINDS",
    "Potential",
    "TransverseFieldSpec",
    "f_value",
    "euclid_gradient",
    "sphere_gradient",
    "transverse_field",
    "fd_sphere_gradient",
    "GradientCheck",
    "gradient_check",
]

FAMILIES = ("quartic_vertex_well", "weighted_quartic")
TRANSVERSE_KINDS = ("none", "tangent_rotation")
WEIGHT_RANGE = (1e-3, 1e3)


@dataclass(frozen=True)
class Potential:
    """An f-function on S+.

    ``weights=None`` means unit weights in every dimension. Explicit weights
    must be strictly positive and are clamped to ``WEIGHT_RANGE``.
    """

    family: str = "quartic_vertex_well"
    weights: tuple = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}; expected one of {FAMILIES}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0.0):
                raise ValueError("weights must be a list of finite, strictly positive numbers")
            object.__setattr__(self, "weights", tuple(np.clip(w, *WEIGHT_RANGE).tolist()))

    def weights_for(self, N):
        if self.weights is None:
            return np.ones(N)
        if len(self.weights) != N:
            raise ValueError(f"potential has {len(self.weights)} weights but the state has dimension {N}")
        return np.array(self.weights)

    @property
    def uniform(self):
        return self.weights is None or len(set(self.weights)) == 1


@dataclass(frozen=True)
class TransverseFieldSpec:
    """Tangent field orthogonal to the sphere gradient.

    ``tangent_rotation`` starts from the generator of rotations in the
    ``(i, j)`` coordinate plane and is orthogonalized against both the radial
    direction and the gradient. ``strength`` has units of 1/time.
    """

    kind: str = "none"
    axis_pair: tuple = (0, 1)
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in TRANSVERSE_KINDS:
            raise ValueError(f"unknown transverse kind {self.kind!r}; expected one of {TRANSVERSE_KINDS}")
        i, j = (int(a) for a in self.axis_pair)
        if i == j or i < 0 or j < 0:
            raise ValueError(f"axis_pair must be two distinct nonnegative indices, got {self.axis_pair}")
        object.__setattr__(self, "axis_pair", (i, j))
        object.__setattr__(self, "strength", float(self.strength))

    def kernel_args(self, N):
        """``(i, j, strength)`` for the compiled kernels; ``i = -1`` disables the field."""
        if self.kind == "none" or self.strength == 0.0:
            return -1, -1, 0.0
        i, j = self.axis_pair
        if i >= N or j >= N:
            raise ValueError(f"axis_pair {self.axis_pair} out of range for N={N}")
        return i, j, self.strength


@nb.njit(inline="always")
def _quartic_value(b, w):
    s = 0.0
    for n in range(b.size):
        b2 = b[n] * b[n]
        s += w[n] * b2 * b2
    return 1.0 - s


@nb.njit(inline="always")
def _quartic_grad_into(b, w, out):
    for n in range(b.size):
        out[n] = -4.0 * w[n] * b[n] * b[n] * b[n]


@nb.njit(inline="always")
def _sphere_grad_into(b, w, out):
    _quartic_grad_into(b, w, out)
    _tangent_project_into(b, out, out)


@nb.njit(inline="always")
def _transverse_into(b, g, ti, tj, strength, out):
    for n in range(b.size):
        out[n] = 0.0
    if ti < 0:
        return
    out[ti] = -strength * b[tj]
    out[tj] = strength * b[ti]
    _tangent_project_into(b, out, out)
    gg = 0.0
    wg = 0.0
    for n in range(b.size):
        gg += g[n] * g[n]
        wg += out[n] * g[n]
    if gg > 0.0:
        c = wg / gg
        for n in range(b.size):
            out[n] -= c * g[n]
        # the subtraction can cancel almost everything; re-project so the
        # rounding left over is tangent relative to the small result
        _tangent_project_into(b, out, out)


def _as_bpoint(b):
    return b if isinstance(b, BPoint) else BPoint(b)


def f_value(p, b):
    """``1 - sum_n w_n b_n**4``."""
    b = _as_bpoint(b)
    return float(_quartic_value(b.b, p.weights_for(b.dim)))


def euclid_gradient(p, b):
    """Ambient gradient ``-4 w_n b_n**3``; accepts any real vector."""
    b = np.asarray(b, dtype=float)
    out = np.empty_like(b)
    _quartic_grad_into(b, p.weights_for(b.size), out)
    return out


def sphere_gradient(p, b):
    """Gradient of ``f`` along S+ (tangential part of the ambient gradient)."""
    b = _as_bpoint(b)
    out = np.empty(b.dim)
    _sphere_grad_into(b.b, p.weights_for(b.dim), out)
    return TangentVector(out, b)


def transverse_field(p, spec, b):
    """Field ``w`` with ``b . w = 0`` and ``w . grad_S f = 0``.

    For ``N = 2`` the tangent space is one-dimensional, so ``w`` vanishes
    wherever the gradient does not.
    """
    b = _as_bpoint(b)
    ti, tj, strength = spec.kernel_args(b.dim)
    g = np.empty(b.dim)
    _sphere_grad_into(b.b, p.weights_for(b.dim), g)
    out = np.empty(b.dim)
    _transverse_into(b.b, g, ti, tj, strength, out)
    return TangentVector(out, b)


def fd_sphere_gradient(p, b, step=1e-5):
    """Tangent projection of the central-difference ambient gradient of
    ``f_value``; an independent check of :func:`sphere_gradient`."""
    b = _as_bpoint(b)
    w = p.weights_for(b.dim)
    g = np.empty(b.dim)
    for n in range(b.dim):
        up = b.b.copy()
        dn = b.b.copy()
        up[n] += step
        dn[n] -= step
        g[n] = (_quartic_value(up, w) - _quartic_value(dn, w)) / (2.0 * step)
    return g - (b.b @ g) / (b.b @ b.b) * b.b


@dataclass(frozen=True)
class GradientCheck:
    samples: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def gradient_check(samples=1000, dims=(2, 3, 5), step=1e-5, tolerance=1e-6, seed=0):
    """Compare :func:`sphere_gradient` with :func:`fd_sphere_gradient` at
    random interior points and random log-uniform weights in [0.1, 10].

    The error is ``|g - g_fd| / max(|g|, 1)``: relative for gradients of unit
    size or more, absolute near critical points where a pure ratio is
    meaningless.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(samples):
        N = dims[k % len(dims)]
        family = FAMILIES[k % 2]
        weights = None if family == "quartic_vertex_well" else tuple(np.exp(rng.uniform(-1.0, 1.0, N) * np.log(10.0)))
        pot = Potential(family, weights)
        b = np.abs(rng.standard_normal(N))
        b = BPoint(b / np.linalg.norm(b))
        g = sphere_gradient(pot, b).v
        fd = fd_sphere_gradient(pot, b, step)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0)))
    return GradientCheck(samples, worst, tolerance)
