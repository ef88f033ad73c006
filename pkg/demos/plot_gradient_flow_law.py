"""
What law does the noisy gradient flow follow?
=============================================

For the quartic well the pairing ``P(x) + P(1 - x) = 1`` holds by the
exchange symmetry of the setup, but nothing forces ``P(x) = x``. With weak
noise the collapse probability is close to a step at the ridge ``x = 0.5``;
stronger noise smooths the step towards the diagonal but does not reach it.
"""
from pathlib import Path

from collapse_lab import DynamicsConfig, NoiseConfig, symmetry_scan
from collapse_lab.plotting import scan_svg

out = Path("demo_output")
out.mkdir(exist_ok=True)

grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

for sigma in (0.05, 0.2, 0.5):
    cfg = DynamicsConfig(step_size=1e-2, noise=NoiseConfig(continuous_sigma=sigma))
    res = symmetry_scan("gradient_flow", cfg, grid, 1000, 9)
    fit = res.linear_fit
    print(f"sigma={sigma}: P0 = {fit.slope:.3f} x {fit.intercept:+.3f}, "
          f"max |P0 - x| = {fit.max_born_deviation:.3f}, symmetric: {res.symmetric}")
    scan_svg(res.grid, res.p1_hat, [s.ci_low[0] for s in res.stats], [s.ci_high[0] for s in res.stats],
             out / f"gradient_flow_scan_sigma{sigma}.svg", fit=fit, title=f"sigma = {sigma}")
