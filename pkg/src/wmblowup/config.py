"""Run configuration files.

Configurations are INI documents (``configparser`` syntax)::

    [grid]
    n_points = 1024
    [run]
    paths = 20

Every key has a default, so an empty file is valid. Unknown sections or keys
are rejected. ``SCHEMA`` is the single source for types, defaults, units and
help text.
"""
import configparser
from dataclasses import dataclass

from .core import RadialGrid, SobolevOrder
from .ensemble import EnsembleConfig, InitialData
from .errors import ConfigError
from .lp import LPConfig
from .solver import SolverConfig

__all__ = ["SCHEMA", "RunConfig", "load_config", "parse_config", "schema_help"]


def _floats(text):
    text = text.strip()
    return tuple(float(x) for x in text.split(",")) if text else ()


def _optional_float(text):
    text = text.strip().lower()
    return None if text in ("", "none", "auto") else float(text)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, help)
SCHEMA = {
    "model": {
        "d": (int, 3, "target sphere dimension, >= 3; space dimension is d + 2"),
        "s": (float, 1.6, "lower Sobolev order (dimensionless), inside (n/2 - 1, n/2 - 1 + 1/(2n - 4))"),
        "k": (int, 6, "upper Sobolev order, integer > n"),
    },
    "grid": {
        "r_max": (float, 4.0, "outer radius of the physical grid (length)"),
        "n_points": (int, 1024, "number of cells; h = r_max / n_points"),
        "dt_factor": (float, 0.5, "time step in units of h, in (0, 0.69)"),
    },
    "noise": {
        "c": (float, 0.0, "noise amplitude (field units per sqrt(time)); 0 disables noise"),
        "beta": (float, 11.0, "spectral decay exponent: sigma_k = c (1 + lambda_k)^(-beta/2)"),
        "modes": (int, 64, "number of forced modes"),
        "sweep": (_floats, (), "comma-separated amplitudes for the ensemble sweep (optional)"),
    },
    "run": {
        "t_final": (float, 1.5, "end of the simulated interval (time)"),
        "horizon": (float, 1.5, "blowup counts only before this time (time), <= t_final"),
        "paths": (int, 200, "ensemble size"),
        "seed": (int, 0, "64-bit run seed; path seeds are derived from it"),
        "mode": (str, "direct", "solver form: direct or dpd"),
        "workers": (int, 1, "worker processes for ensembles and the blowup-time scan"),
        "timing": (_bool, False, "record per-path wall time (ms); off keeps records byte-reproducible"),
    },
    "initial": {
        "kind": (str, "self_similar", "zero, self_similar, self_similar_perturbed or custom"),
        "T": (float, 1.0, "blowup time of the self-similar data (time)"),
        "eps": (float, 0.0, "relative size of the perturbation (dimensionless)"),
        "shape": (str, "bump", "perturbation shape: bump or scale"),
        "path": (str, "", "CSV with columns r, u, u_hat for kind = custom"),
    },
    "detect": {
        "amp_threshold": (_optional_float, None, "central amplitude that declares blowup; auto = resolution limit"),
        "fit_window": (int, 50, "samples in the blowup-time fit"),
    },
    "lp": {
        "delta": (float, 0.1, "radius of the fixed-point ball (dimensionless)"),
        "big_C": (float, 1.0, "data smallness divisor (dimensionless)"),
        "N": (float, 10.0, "bracket divisor: T_tilde in [T - delta/N, T + delta/N]"),
        "omega_bar": (float, 0.05, "decay rate of the weighted norm (1/similarity time)"),
        "tau_max": (float, 200.0, "truncation of the similarity-time integrals"),
        "picard_tol": (float, 1e-10, "Picard stopping tolerance (weighted norm)"),
        "dtau": (float, 0.05, "similarity-time lattice spacing"),
        "xi_max": (float, 2.5, "outer edge of the similarity grid (> 1)"),
        "xi_h": (float, 1 / 128, "spacing of the similarity grid"),
    },
    "control": {
        "T1": (float, 1.0, "steering horizon (time); must be a multiple of dt"),
    },
}


def schema_help():
    lines = ["configuration keys (INI sections):"]
    for section, keys in SCHEMA.items():
        lines.append(f"  [{section}]")
        for key, (_, default, text) in keys.items():
            shown = "auto" if default is None else default
            lines.append(f"    {key} (default {shown}): {text}")
    return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    """Validated values, ``values[section][key]``, with builders for module configs."""

    values: dict

    def __getitem__(self, section):
        return self.values[section]

    @property
    def n(self):
        return self["model"]["d"] + 2

    @property
    def order(self):
        return SobolevOrder(self["model"]["s"], self["model"]["k"])

    @property
    def grid(self):
        g = self["grid"]
        return RadialGrid(g["r_max"], g["n_points"])

    def solver(self, **overrides):
        kw = dict(grid=self.grid, n=self.n, dt_factor=self["grid"]["dt_factor"],
                  mode=self["run"]["mode"], amp_threshold=self["detect"]["amp_threshold"],
                  t_final=self["run"]["t_final"], fit_window=self["detect"]["fit_window"],
                  order=self.order)
        kw.update(overrides)
        return SolverConfig(**kw)

    def initial(self):
        i = self["initial"]
        return InitialData(i["kind"], i["T"], i["eps"], i["shape"], i["path"] or None)

    def ensemble(self, **overrides):
        r, z = self["run"], self["noise"]
        kw = dict(solver=self.solver(), paths=r["paths"], run_seed=r["seed"],
                  horizon=r["horizon"], initial=self.initial(), amplitude=z["c"],
                  beta=z["beta"], modes=z["modes"], sweep=z["sweep"] or None,
                  workers=r["workers"], record_timing=r["timing"])
        kw.update(overrides)
        return EnsembleConfig(**kw)

    def lp(self):
        p = self["lp"]
        return LPConfig(delta=p["delta"], big_C=p["big_C"], N=p["N"], omega_bar=p["omega_bar"],
                        tau_max=p["tau_max"], picard_tol=p["picard_tol"], dtau=p["dtau"],
                        xi_max=p["xi_max"], xi_h=p["xi_h"], workers=self["run"]["workers"])


def parse_config(text="", overrides=()):
    """Parse INI text plus ``section.key=value`` overrides (which win)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides:
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        raw.setdefault(section, {})[key] = value.strip()
    values = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in raw[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default, _) in keys.items():
            if key in raw.get(section, {}):
                try:
                    values[section][key] = conv(raw[section][key])
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            else:
                values[section][key] = default
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["model"]["d"] < 3:
        raise ConfigError("model.d must be >= 3")
    cfg.order.validate(cfg.n)
    if cfg["run"]["mode"] not in ("direct", "dpd"):
        raise ConfigError("run.mode must be direct or dpd")
    if cfg["run"]["horizon"] > cfg["run"]["t_final"]:
        raise ConfigError("run.horizon must not exceed run.t_final")
    if cfg["noise"]["c"] < 0:
        raise ConfigError("noise.c must be non-negative")
    try:
        cfg.grid
        cfg.solver()
        cfg.initial()
        cfg.lp().validate(cfg["initial"]["T"], cfg.n, cfg.order)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()):
    """Read a configuration file (``None`` means all defaults)."""
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides)
