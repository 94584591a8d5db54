"""Run configuration: TOML loading, schema validation and hashing."""

import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ANGLE_FIELDS = ("twist", "roll", "yaw")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"seed": 0, "output": "runs/default", "threads": 1},
    "flow": {"speed": 0.25, "density": 1030.0, "viscosity": 0.0012, "gravity": 9.804},
    "budget": {
        "m_sci": 1.0,
        "m_pay": 2.5,
        "m_bat": 8.0,
        "m_buo": 7.5,
        "V_sci": 0.0068,
        "V_pay": 0.0026,
        "V_bat": 0.005,
        "rho_fill": 950.0,
        "rho_ph": 2700.0,
        "E_ph": 69e9,
        "nu_ph": 0.33,
        "P_max": 10e6,
        "tau": 2.0,
        "eps_cont": 0.05,
    },
    "geometry": {"design_space": "", "n_span": 57, "n_chord": 57},
    "hydro": {"coarse": [20, 10], "fine": [40, 20], "transition_re": 5e5, "snapshot_aoa": 8.0},
    "sizing": {
        "particles": 32,
        "iterations": 200,
        "inertia": 0.721,
        "cognitive": 1.193,
        "social": 1.193,
        "local_iterations": 50,
        "local_shrink": 0.5,
        "local_step": 0.1,
        "penalty": 1e6,
        "axis_bounds": [0.02, 0.6],
        "thickness_bounds": [0.001, 0.03],
        "v_buo_max": 0.05,
    },
    "reduction": {"ensemble_size": 2048, "field": "strip", "eta": 0.95, "fence": 3.0, "expand": 0.05, "max_failure_rate": 0.5},
    "surrogate": {"mu": "gcv", "n_eps": 16},
    "optimizer": {
        "n_lf": 128,
        "n_hf": 32,
        "max_iterations": 6,
        "max_cost": float("inf"),
        "stop_uncertainty": 0.03,
        "stop_hv_gain": 0.001,
        "stop_window": 2,
        "scan": 16384,
        "mc_samples": 4096,
        "k_max": 8,
        "cost_mode": "static",
        "static_costs": [1.0, 10.0],
        "ref_margin": 0.1,
        "log_weight": True,
    },
}

# keys accepting a number or one of the listed strings
_NUMBER_OR = {("surrogate", "mu"): ("gcv",)}

# keys excluded from the config hash: they change where/how fast, not what
_UNHASHED = {("run", "output"), ("run", "threads")}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            expected = base[key]
            alt = _NUMBER_OR.get(tuple(where.split(".")))
            if alt is not None:
                ok = value in alt if isinstance(value, str) else isinstance(value, (int, float)) and not isinstance(value, bool)
            elif isinstance(expected, bool) or isinstance(value, bool):
                ok = isinstance(value, type(expected))
            elif isinstance(expected, (int, float)):
                ok = isinstance(value, (int, float))
            else:
                ok = isinstance(value, type(expected))
            if not ok:
                kind = " or ".join(["number", *map(repr, alt)]) if alt is not None else type(expected).__name__
                raise ConfigError(f"'{where}' must be of type {kind}, got {value!r}")
            out[key] = value
    return out


def _check(cfg):
    def positive(section, *keys):
        for k in keys:
            if not cfg[section][k] > 0:
                raise ConfigError(f"'{section}.{k}' must be > 0")

    positive("flow", "speed", "density", "viscosity", "gravity")
    positive("budget", *cfg["budget"].keys())
    if not 0 < cfg["reduction"]["eta"] <= 1:
        raise ConfigError("'reduction.eta' must lie in (0, 1]")
    for name in ("coarse", "fine"):
        lat = cfg["hydro"][name]
        if len(lat) != 2 or min(lat) < 2:
            raise ConfigError(f"'hydro.{name}' must be two lattice sizes >= 2")
    opt = cfg["optimizer"]
    if not 0 < opt["n_hf"] <= opt["n_lf"]:
        raise ConfigError("need 0 < optimizer.n_hf <= optimizer.n_lf")
    if opt["cost_mode"] not in ("static", "measured"):
        raise ConfigError("'optimizer.cost_mode' must be 'static' or 'measured'")
    if cfg["reduction"]["field"] not in ("strip", "panel"):
        raise ConfigError("'reduction.field' must be 'strip' or 'panel'")
    mu = cfg["surrogate"]["mu"]
    if not isinstance(mu, str) and mu < 0:
        raise ConfigError("'surrogate.mu' must be >= 0")
    if cfg["reduction"]["ensemble_size"] < 1:
        raise ConfigError("'reduction.ensemble_size' must be >= 1")
    ds = cfg["geometry"]["design_space"]
    if ds and not Path(ds).is_file():
        raise ConfigError(f"design space file not found: {ds}")


@dataclass
class RunConfig:
    data: dict
    source: str = ""

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return int(self.data["run"]["seed"])

    @property
    def output(self):
        return Path(self.data["run"]["output"])

    def hash(self, keys=None):
        """Short digest of the config.

        ``keys`` restricts the digest to the listed tables (``"flow"``) or
        single entries (``"reduction.eta"``).
        """
        hashed = copy.deepcopy(self.data)
        for section, key in _UNHASHED:
            hashed[section].pop(key, None)
        if keys is not None:
            picked = {}
            for k in keys:
                section, _, entry = k.partition(".")
                if section not in hashed or (entry and entry not in hashed[section]):
                    raise ConfigError(f"unknown config key '{k}'")
                picked[k] = hashed[section][entry] if entry else hashed[section]
            hashed = picked
        blob = json.dumps(hashed, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self):
        return json.dumps(self.data, sort_keys=True, indent=2, default=str)


def load_config(path=None, overrides=None):
    """Defaults, then the TOML file at ``path``, then ``overrides`` (nested dict)."""
    cfg = copy.deepcopy(DEFAULTS)
    source = ""
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = _merge(cfg, user)
        ds = cfg["geometry"]["design_space"]
        if ds and not Path(ds).is_absolute():
            cfg["geometry"]["design_space"] = str((path.parent / ds).resolve())
        source = str(path)
    if overrides:
        cfg = _merge(cfg, overrides)
    env_out = os.environ.get("GLIDERMDO_OUTPUT")
    if env_out and not (overrides and "output" in overrides.get("run", {})):
        cfg["run"]["output"] = env_out
    _check(cfg)
    return RunConfig(cfg, source)


def default_config_path():
    return resources.files("glidermdo") / "data" / "default.toml"


@dataclass
class DesignSpace:
    """Box bounds and baseline of the 32 geometric parameters (angles in radians)."""

    names: tuple
    lower: np.ndarray
    baseline: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if not (np.all(self.lower <= self.baseline) and np.all(self.baseline <= self.upper)):
            raise ConfigError("design space baseline must lie inside its bounds")

    @property
    def bounds(self):
        return np.column_stack([self.lower, self.upper])

    def from_unit(self, z):
        return self.lower + np.asarray(z) * (self.upper - self.lower)

    def digest(self):
        h = hashlib.sha256()
        for a in (self.lower, self.baseline, self.upper):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()[:16]


def load_design_space(path=None):
    if path:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        with (resources.files("glidermdo") / "data" / "design_space.toml").open("rb") as fh:
            raw = tomllib.load(fh)
    names, rows = [], []
    for section in ("root", "s2", "s3", "s4"):
        if section not in raw:
            raise ConfigError(f"design space lacks section [{section}]")
        for key, triple in raw[section].items():
            if len(triple) != 3:
                raise ConfigError(f"design space entry {section}.{key} needs [lower, baseline, upper]")
            vals = np.radians(triple) if key in ANGLE_FIELDS else np.asarray(triple, dtype=float)
            names.append(f"{'s1' if section == 'root' else section}_{key}")
            rows.append(vals)
    if len(names) != 32:
        raise ConfigError(f"design space must define 32 parameters, found {len(names)}")
    rows = np.array(rows)
    return DesignSpace(tuple(names), rows[:, 0], rows[:, 1], rows[:, 2])
