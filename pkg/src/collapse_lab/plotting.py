"""SVG figures: two-level trajectories on the quarter circle, three-level
trajectories on the probability triangle, and scan curves.

Output is deterministic for fixed inputs: the SVG id salt is fixed and no
date is stamped.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["trajectory_svg", "scan_svg", "SVG_DIMS"]

SVG_DIMS = (2, 3)
_SALT = "collapse-lab"


def _save(fig, path):
    with plt.rc_context({"svg.hashsalt": _SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _ternary(p):
    # barycentric -> plane, vertex n at the n-th corner of an equilateral triangle
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    return np.asarray(p) @ corners


def trajectory_svg(points, path, title=None):
    """Draw a trajectory given as rows of b-points.

    Raises ``ValueError`` unless ``N`` is 2 or 3.
    """
    points = np.asarray(points, dtype=float)
    N = points.shape[1]
    if N not in SVG_DIMS:
        raise ValueError("SVG supported for N in {2,3}")
    fig, ax = plt.subplots(figsize=(5, 5))
    if N == 2:
        theta = np.linspace(0.0, np.pi / 2, 200)
        ax.plot(np.cos(theta), np.sin(theta), color="0.7", lw=1)
        ax.plot(points[:, 0], points[:, 1], color="C0", lw=2)
        ax.plot(*points[0], "o", color="C1", label="b(0)")
        ax.plot([1, 0], [0, 1], "s", color="k", label="vertices")
        ax.set_xlabel("$b_0$")
        ax.set_ylabel("$b_1$")
        ax.set_xlim(-0.05, 1.1)
        ax.set_ylim(-0.05, 1.1)
    else:
        tri = _ternary(np.vstack([np.eye(3), [1.0, 0.0, 0.0]]))
        ax.plot(tri[:, 0], tri[:, 1], color="0.7", lw=1)
        xy = _ternary(points**2)
        ax.plot(xy[:, 0], xy[:, 1], color="C0", lw=2)
        ax.plot(*xy[0], "o", color="C1", label="p(0)")
        for n, (x, y) in enumerate(tri[:3]):
            ax.annotate(f"$e_{n}$", (x, y), textcoords="offset points", xytext=(4, 4))
        ax.axis("off")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def scan_svg(grid, p1_hat, ci_low, ci_high, path, fit=None, title=None):
    """Estimated collapse probability at vertex 0 against ``x = b_0(0)**2``,
    with the line ``P = x`` for reference."""
    grid = np.asarray(grid, dtype=float)
    p1 = np.asarray(p1_hat, dtype=float)
    err = np.vstack([p1 - np.asarray(ci_low), np.asarray(ci_high) - p1])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([0, 1], [0, 1], "--", color="0.5", lw=1, label="P = x")
    ax.errorbar(grid, p1, yerr=err, fmt="o", color="C0", capsize=3, label="estimate")
    if fit is not None:
        ax.plot([0, 1], [fit.intercept, fit.intercept + fit.slope], color="C1", lw=1,
                label=f"fit: {fit.slope:.3f} x + {fit.intercept:.3f}")
    ax.set_xlabel("$x = b_0(0)^2$")
    ax.set_ylabel("$\\hat P_0$")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(loc="upper left", frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)
