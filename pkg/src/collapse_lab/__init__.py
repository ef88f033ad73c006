"""Collapse dynamics on the positive part of the unit sphere.

A state ``c`` is mapped to the point ``b = |c|`` of S+ and driven by a
gradient-like flow towards the vertices, with small noise deciding which
vertex wins. Ensembles of such runs are compared with the Born weights
``|c_n|**2``; a martingale diffusion on the simplex serves as an exact
reference.
"""
__version__ = "0.1.0"

from .dynamics import (  # noqa: E402
    DynamicsConfig,
    NoiseConfig,
    Outcome,
    Trajectory,
    descent_check,
    drift,
    jitter_initial,
    run_trajectory,
    run_trials,
    step_deterministic,
    step_stochastic,
)
from .potentials import Potential, TransverseFieldSpec, f_value, sphere_gradient, transverse_field  # noqa: E402
from .reference_dynamics import martingale_step, run_martingale, run_martingale_trials  # noqa: E402
from .state_space import (  # noqa: E402
    AmplitudeVector,
    BPoint,
    SimplexPoint,
    TangentVector,
    amplitudes_to_bpoint,
    bpoint_to_probabilities,
    project_to_sphere,
    tangent_project,
    vertex,
)
from .stats import CollapseStats, ScanResult, born_reference, run_ensemble, symmetry_scan  # noqa: E402
from .streams import Stream  # noqa: E402
