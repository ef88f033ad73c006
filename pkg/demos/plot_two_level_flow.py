"""
Two-level flow on the quarter circle
====================================

A two-level state lives on the arc ``b_0**2 + b_1**2 = 1`` with both
coordinates nonnegative. Without noise the quartic well drives every start
to the nearer end of the arc; the midpoint is the ridge between them.
"""
from pathlib import Path

import numpy as np

from collapse_lab import BPoint, DynamicsConfig, NoiseConfig, Stream, project_to_sphere, run_trajectory
from collapse_lab.plotting import trajectory_svg

out = Path("demo_output")
out.mkdir(exist_ok=True)

cfg = DynamicsConfig(step_size=1e-3, noise=NoiseConfig(0.0, 0.0))

# a start closer to vertex 1
traj = run_trajectory(cfg, BPoint([0.6, 0.8]), Stream.from_seed(0))
print(traj.outcome)
trajectory_svg(traj.points, out / "two_level_descent.svg")

# f along the path never goes up
print("largest step in f:", np.diff(traj.f_values).max())

###############################################################################
# Starting just off the ridge, the side is fixed by the tiny offset.

for x in (0.5 - 1e-6, 0.5 + 1e-6):
    b0 = BPoint([np.sqrt(x), np.sqrt(1 - x)])
    print(x, run_trajectory(cfg, b0, Stream.from_seed(0), record=False).outcome)

###############################################################################
# With a little noise the ridge start splits between the two vertices.

noisy = DynamicsConfig(step_size=1e-3, noise=NoiseConfig(continuous_sigma=1e-3))
ends = [run_trajectory(noisy, project_to_sphere([1.0, 1.0]), Stream.for_trial(1, i), record=False).outcome.vertex_index
        for i in range(200)]
print("vertex 0 share from the ridge:", ends.count(0) / len(ends))
