"""Run configuration: TOML files with one table level plus ``--key=value``
overrides.

Every key has a default, so a config file only lists what it changes. The
resolved configuration (defaults filled in) is echoed into every result
document.
"""
import copy
import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import DynamicsConfig, NoiseConfig
from .potentials import Potential, TransverseFieldSpec
from .state_space import AmplitudeVector, BPoint, SimplexPoint
from .stats import MODELS, check_grid

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "parse_override"]


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to a usage error."""


DEFAULTS = {
    "run": {"model": "gradient_flow", "trials": 1000, "seed": 0, "ci_level": 0.99, "workers": 0},
    "state": {"amplitudes": None, "bpoint": None, "simplex": None},
    "dynamics": {"step_size": 1e-3, "t_max": 200.0, "collapse_eps": 1e-6},
    "noise": {"initial_jitter": 0.0, "continuous_sigma": 1e-3},
    "potential": {"family": "quartic_vertex_well", "weights": None},
    "transverse": {"kind": "none", "axis_pair": [0, 1], "strength": 0.0},
    "scan": {"grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "trials": 2000},
    "gradcheck": {"samples": 1000, "dims": [2, 3, 5], "fd_step": 1e-5, "tolerance": 1e-6},
    "martingale_check": {
        "p0": [0.3, 0.7],
        "sigma": 0.5,
        "step_size": 1e-3,
        "collapse_eps": 1e-6,
        "t_max": 200.0,
        "trials": 20000,
        "drift_samples": 100000,
    },
}

_STATE_FORMS = ("amplitudes", "bpoint", "simplex")


def parse_override(text):
    """Split ``section.key=value``; the value uses TOML syntax, and anything
    that does not parse as TOML is taken as a bare string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def _merge(doc, source):
    for section, table in doc.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{source}: [{section}] must be a table")
        for key in table:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")


def load_config(path=None, overrides=()):
    """Read ``path`` (may be ``None``), apply overrides and validate."""
    values = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _merge(doc, path)
        for section, table in doc.items():
            values[section].update(table)
    for text in overrides:
        section, key, value = parse_override(text)
        _merge({section: {key: value}}, "override")
        values[section][key] = value
    return RunConfig(values)


def _number(values, section, key, kind=float):
    v = values[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {v!r}")
    if kind is int:
        if v != int(v):
            raise ConfigError(f"{section}.{key} must be an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{section}.{key} must be finite")
    return float(v)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; ``values`` holds the resolved tables."""

    values: dict

    def __post_init__(self):
        try:
            self._build()
        except ConfigError:
            raise
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(str(exc)) from None

    def _build(self):
        v = self.values
        if v["run"]["model"] not in MODELS:
            raise ConfigError(f"run.model must be one of {MODELS}, got {v['run']['model']!r}")
        for key in ("trials", "seed", "workers"):
            _number(v, "run", key, int)
        if _number(v, "run", "seed", int) < 0:
            raise ConfigError("run.seed must be >= 0")
        level = _number(v, "run", "ci_level")
        if not 0.0 < level < 1.0:
            raise ConfigError("run.ci_level must lie in (0, 1)")
        pot = v["potential"]
        trans = v["transverse"]
        noise = NoiseConfig(
            _number(v, "noise", "initial_jitter"), _number(v, "noise", "continuous_sigma")
        )
        dyn = DynamicsConfig(
            step_size=_number(v, "dynamics", "step_size"),
            t_max=_number(v, "dynamics", "t_max"),
            collapse_eps=_number(v, "dynamics", "collapse_eps"),
            potential=Potential(pot["family"], None if pot["weights"] is None else tuple(pot["weights"])),
            transverse=TransverseFieldSpec(trans["kind"], tuple(trans["axis_pair"]), _number(v, "transverse", "strength")),
            noise=noise,
        )
        object.__setattr__(self, "dynamics", dyn)
        check_grid(v["scan"]["grid"])
        _number(v, "scan", "trials", int)
        _number(v, "gradcheck", "samples", int)
        _number(v, "martingale_check", "trials", int)
        _number(v, "martingale_check", "drift_samples", int)

    @property
    def model(self):
        return self.values["run"]["model"]

    @property
    def trials(self):
        return int(self.values["run"]["trials"])

    @property
    def seed(self):
        return int(self.values["run"]["seed"])

    @property
    def ci_level(self):
        return float(self.values["run"]["ci_level"])

    @property
    def workers(self):
        return int(self.values["run"]["workers"])

    def section(self, name):
        return self.values[name]

    def initial_state(self):
        """The configured start as an :class:`AmplitudeVector`,
        :class:`BPoint` or :class:`SimplexPoint`.

        Amplitudes are ``[modulus, phase]`` pairs; the phases do not affect
        the dynamics and are only echoed.
        """
        st = self.values["state"]
        given = [k for k in _STATE_FORMS if st.get(k) is not None]
        if len(given) != 1:
            raise ConfigError(
                f"exactly one of state.amplitudes, state.bpoint, state.simplex is required, got {given or 'none'}"
            )
        form = given[0]
        try:
            if form == "amplitudes":
                pairs = st["amplitudes"]
                if any(not isinstance(pr, list) or len(pr) != 2 for pr in pairs):
                    raise ConfigError("state.amplitudes must be a list of [modulus, phase] pairs")
                return AmplitudeVector.from_polar([m for m, _ in pairs], [ph for _, ph in pairs])
            if form == "bpoint":
                return BPoint(st["bpoint"])
            return SimplexPoint(st["simplex"])
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"state.{form}: {exc}") from None

    def echo(self):
        """Resolved configuration as plain data (``None`` entries dropped,
        which TOML cannot express either)."""
        return {
            sec: {k: copy.deepcopy(val) for k, val in table.items() if val is not None}
            for sec, table in self.values.items()
        }
