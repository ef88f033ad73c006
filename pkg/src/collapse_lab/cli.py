"""``collapse-lab`` command line.

    collapse-lab <trajectory|ensemble|scan|gradcheck|martingale-check>
                 --config FILE [--section.key=value ...] --out DIR [--svg]

Exit status is 0 on success, 1 when a self-check fails and 2 on usage or
configuration errors.
"""
import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .dynamics import DynamicsConfig, NoiseConfig, run_trajectory
from .plotting import SVG_DIMS, scan_svg, trajectory_svg
from .potentials import gradient_check
from .reference_dynamics import martingale_increment
from .state_space import AmplitudeVector, BPoint, SimplexPoint
from .stats import run_ensemble, symmetry_scan
from .streams import Stream

__all__ = ["main", "build_parser", "result_schema", "UsageError"]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

ORACLE_NOTE = (
    "martingale diffusion on the simplex: a reference process whose absorption law "
    "equals the Born weights exactly; not a model of the measurement dynamics"
)


class UsageError(Exception):
    pass


def result_schema():
    """JSON schema of the ``ensemble`` result document."""
    return json.loads(resources.files("collapse_lab").joinpath("result_schema.json").read_text(encoding="utf-8"))


# output helpers -------------------------------------------------------------


def _plain(x):
    # JSON-safe copy: numpy scalars to Python, NaN and infinities to null
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(path, doc):
    text = json.dumps(_plain(doc), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])


def _outdir(path, required=True):
    if path is None:
        if required:
            raise UsageError("--out DIR is required for this subcommand")
        return None
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def _as_bpoint(start):
    if isinstance(start, BPoint):
        return start
    if isinstance(start, AmplitudeVector):
        return BPoint(np.abs(start.c))
    b = np.sqrt(start.p)
    return BPoint(b / np.linalg.norm(b))


def _header(cfg, command):
    return {"version": __version__, "command": command, "seed": cfg.seed, "config": cfg.echo()}


# subcommands ----------------------------------------------------------------


def cmd_trajectory(cfg, out, svg=False):
    b0 = _as_bpoint(cfg.initial_state())
    if svg and b0.dim not in SVG_DIMS:
        raise UsageError("SVG supported for N in {2,3}")
    traj = run_trajectory(cfg.dynamics, b0, Stream.for_trial(cfg.seed, 0), record=True)
    N = b0.dim
    rows = (
        [t, *b, f] for t, b, f in zip(traj.times.tolist(), traj.points.tolist(), traj.f_values.tolist())
    )
    write_csv(out / "trajectory.csv", ["t", *(f"b_{n}" for n in range(N)), "f"], rows)
    if svg:
        trajectory_svg(traj.points, out / "trajectory.svg")
    oc = traj.outcome
    if oc.collapsed:
        print(f"collapsed at vertex {oc.vertex_index}, t = {oc.collapse_time:.6g} ({len(traj)} rows)")
    else:
        print(f"{oc.kind} after {len(traj)} rows")
    return EXIT_OK


def cmd_ensemble(cfg, out):
    if cfg.trials < 1:
        raise UsageError("run.trials must be >= 1")
    start = cfg.initial_state()
    stats = run_ensemble(cfg.model, cfg.dynamics, start, cfg.trials, cfg.seed, cfg.ci_level, workers=cfg.workers)
    doc = _header(cfg, "ensemble")
    doc.update({"model": cfg.model, **stats.to_dict()})
    if cfg.model == "martingale":
        doc["oracle"] = ORACLE_NOTE
    write_json(out / "ensemble.json", doc)
    freq = ", ".join(f"{f:.4f}" for f in stats.frequencies)
    born = ", ".join(f"{p:.4f}" for p in stats.born)
    print(f"{cfg.model}: {stats.trials} trials, frequencies [{freq}] vs Born [{born}]")
    print(f"chi-square {stats.chi_square:.4g} (dof {stats.chi_square_dof}), p = {stats.p_value:.4g}; "
          f"censored {stats.censored}, failed {stats.failed}")
    if stats.censored_flag:
        print("warning: more than 1% of trials censored; the comparison may be biased")
    return EXIT_OK


def cmd_scan(cfg, out, svg=False):
    trials = int(cfg.section("scan")["trials"])
    if trials < 1:
        raise UsageError("scan.trials must be >= 1")
    res = symmetry_scan(cfg.model, cfg.dynamics, cfg.section("scan")["grid"], trials, cfg.seed, cfg.ci_level,
                        workers=cfg.workers)
    rows = []
    for x, s in zip(res.grid, res.stats):
        if s is None:
            rows.append([x, math.nan, math.nan, math.nan, math.nan])
        else:
            rows.append([x, s.frequencies[0], s.ci_low[0], s.ci_high[0], s.censored_fraction])
    write_csv(out / "scan.csv", ["x", "p1_hat", "ci_low", "ci_high", "censored_frac"], rows)
    write_csv(
        out / "scan_symmetry.csv",
        ["x", "partner", "residual", "bound", "within"],
        [[x, y, r, b, int(r <= b)] for (x, y), r, b in zip(res.pairs, res.symmetry_residuals, res.symmetry_bounds)],
    )
    fit = res.linear_fit
    doc = _header(cfg, "scan")
    doc.update({
        "model": cfg.model,
        "trials_per_point": trials,
        "ci_level": res.ci_level,
        "grid": res.grid,
        "points": [None if s is None else s.to_dict() for s in res.stats],
        "symmetry": {
            "pairs": res.pairs,
            "residuals": res.symmetry_residuals,
            "bounds": res.symmetry_bounds,
            "all_within": res.symmetric,
        },
        "linear_fit": None if fit is None else {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "slope_se": fit.slope_se,
            "intercept_se": fit.intercept_se,
            "max_residual": fit.max_residual,
            "max_born_deviation": fit.max_born_deviation,
        },
        "errors": res.errors,
    })
    if cfg.model == "martingale":
        doc["oracle"] = ORACLE_NOTE
    write_json(out / "scan.json", doc)
    if svg:
        scan_svg(res.grid, [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
                 out / "scan.svg", fit=fit)
    if fit is not None:
        print(f"fit P0(x) = {fit.slope:.4f} x + {fit.intercept:.4f} "
              f"(se {fit.slope_se:.2g}, {fit.intercept_se:.2g}); max |P0 - x| = {fit.max_born_deviation:.4f}")
    print(f"symmetry residuals within bounds: {res.symmetric}")
    for x, msg in res.errors.items():
        print(f"grid point {x}: {msg}")
    return EXIT_OK


def cmd_gradcheck(cfg, out=None):
    sec = cfg.section("gradcheck")
    rep = gradient_check(int(sec["samples"]), tuple(sec["dims"]), float(sec["fd_step"]), float(sec["tolerance"]),
                         seed=cfg.seed)
    status = "PASS" if rep.passed else "FAIL"
    print(f"gradcheck {status}: max relative error {rep.max_rel_error:.3e} over {rep.samples} samples "
          f"(tolerance {rep.tolerance:g})")
    if out is not None:
        doc = _header(cfg, "gradcheck")
        doc.update({"samples": rep.samples, "max_rel_error": rep.max_rel_error, "tolerance": rep.tolerance,
                    "passed": rep.passed})
        write_json(out / "gradcheck.json", doc)
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


def cmd_martingale_check(cfg, out=None):
    sec = cfg.section("martingale_check")
    try:
        p0 = SimplexPoint(sec["p0"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"martingale_check.p0: {exc}") from None
    h, sigma = float(sec["step_size"]), float(sec["sigma"])
    n_drift = int(sec["drift_samples"])
    if n_drift < 2 or int(sec["trials"]) < 1:
        raise UsageError("martingale_check needs drift_samples >= 2 and trials >= 1")

    # one-step drift: the mean increment must vanish
    dp = martingale_increment(p0, h, sigma, Stream.for_trial(cfg.seed, 0, prefix=(1,)), size=n_drift)
    mean = dp.mean(axis=0)
    se = dp.std(axis=0, ddof=1) / math.sqrt(n_drift)
    drift_ok = bool(np.all(np.abs(mean) <= 3.0 * se))
    print(f"drift {'PASS' if drift_ok else 'FAIL'}: mean increment {np.array2string(mean, precision=3)} "
          f"with 3 SE {np.array2string(3 * se, precision=3)} ({n_drift} draws)")

    # absorption: frequencies must match p0
    dyn = DynamicsConfig(step_size=h, t_max=float(sec["t_max"]), collapse_eps=float(sec["collapse_eps"]),
                         noise=NoiseConfig(0.0, sigma))
    stats = run_ensemble("martingale", dyn, p0, int(sec["trials"]), cfg.seed, cfg.ci_level, prefix=(2,),
                         workers=cfg.workers)
    covered = [lo <= p <= hi for lo, p, hi in zip(stats.ci_low, p0.p, stats.ci_high)]
    clamp_ok = stats.clamped_fraction is not None and stats.clamped_fraction < 0.01
    absorb_ok = all(covered) and not stats.censored_flag and stats.failed == 0
    freq = ", ".join(f"{f:.4f}" for f in stats.frequencies)
    print(f"absorption {'PASS' if absorb_ok else 'FAIL'}: frequencies [{freq}] vs p0 "
          f"{[float(p) for p in p0.p]} ({stats.trials} trials, {cfg.ci_level:g} Wilson), "
          f"censored {stats.censored}")
    print(f"clamping {'PASS' if clamp_ok else 'FAIL'}: clamped step fraction {stats.clamped_fraction:.3g}")
    passed = drift_ok and absorb_ok and clamp_ok
    if out is not None:
        doc = _header(cfg, "martingale-check")
        doc.update({
            "oracle": ORACLE_NOTE,
            "drift": {"samples": n_drift, "mean": mean, "se": se, "passed": drift_ok},
            "absorption": {**stats.to_dict(), "covered": covered, "passed": absorb_ok},
            "clamping": {"fraction": stats.clamped_fraction, "passed": clamp_ok},
            "passed": passed,
        })
        write_json(out / "martingale_check.json", doc)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


COMMANDS = {
    "trajectory": cmd_trajectory,
    "ensemble": cmd_ensemble,
    "scan": cmd_scan,
    "gradcheck": cmd_gradcheck,
    "martingale-check": cmd_martingale_check,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="collapse-lab",
        description="Collapse dynamics on the positive unit sphere and Born-rule statistics.",
        epilog="Any config key can be overridden with --section.key=value (TOML value syntax).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", metavar="FILE", help="TOML configuration file")
    parser.add_argument("--out", metavar="DIR", help="output directory (created if missing)")
    parser.add_argument("--svg", action="store_true", help="also write an SVG figure (trajectory, scan)")
    return parser


def main(argv=None):
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    overrides = []
    for item in rest:
        if not item.startswith("--") or "=" not in item:
            parser.error(f"unrecognized argument {item!r}; overrides take the form --section.key=value")
        overrides.append(item[2:])
    try:
        cfg = load_config(args.config, overrides)
        if args.command in ("trajectory", "ensemble", "scan"):
            out = _outdir(args.out)
            if args.command == "ensemble":
                return COMMANDS[args.command](cfg, out)
            return COMMANDS[args.command](cfg, out, svg=args.svg)
        return COMMANDS[args.command](cfg, _outdir(args.out, required=False))
    except (ConfigError, UsageError) as exc:
        print(f"collapse-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
