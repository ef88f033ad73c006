"""
The martingale oracle and the line P = x
========================================

The reference diffusion moves the weights ``p_n`` with zero drift and
freezes them at a vertex, so each vertex is reached with probability equal
to its starting weight. A scan over ``x = p_0(0)`` should therefore lie on
the diagonal.
"""
from pathlib import Path

from collapse_lab import DynamicsConfig, NoiseConfig, SimplexPoint, run_ensemble, symmetry_scan
from collapse_lab.plotting import scan_svg

out = Path("demo_output")
out.mkdir(exist_ok=True)

# a coarse step keeps the demo quick; the absorption law does not depend on it
cfg = DynamicsConfig(step_size=1e-2, noise=NoiseConfig(continuous_sigma=0.5))

s = run_ensemble("martingale", cfg, SimplexPoint([0.2, 0.3, 0.5]), 5000, 1)
print("three levels:", s.frequencies, "chi-square p =", round(s.p_value, 3))

grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
res = symmetry_scan("martingale", cfg, grid, 2000, 2)
fit = res.linear_fit
print(f"slope {fit.slope:.3f} +- {fit.slope_se:.3f}, intercept {fit.intercept:.3f} +- {fit.intercept_se:.3f}")
print("pairs within bounds:", res.symmetric)

p1 = res.p1_hat
lo = [st.ci_low[0] for st in res.stats]
hi = [st.ci_high[0] for st in res.stats]
scan_svg(res.grid, p1, lo, hi, out / "martingale_scan.svg", fit=fit)
