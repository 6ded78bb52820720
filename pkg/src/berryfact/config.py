"""Run configuration: INI config files, grid presets, validation, echo.

The config format is a flat ``key = value`` file with sections; unknown
sections or keys are errors (silent typos are worse than loud ones).  Every
key has a default, so an empty file is a valid configuration.  Grid presets
(desk / default / fine) override the two grid point counts and come from the
command line, not the file.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace

from .grid import Grid
from .model import ModelParams

PRESETS = {
    "desk": {"electron_points": 33, "nuclear_points": 25},
    "default": {"electron_points": 49, "nuclear_points": 33},
    "fine": {"electron_points": 65, "nuclear_points": 41},
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; the manifest echoes it verbatim."""

    a: float = 0.5
    b: float = 10.0
    r0: float = 3.5
    L: float = 4 * math.sqrt(3) / 5
    M: float = 10.0
    electron_extent: float = 8.0
    electron_points: int = 49
    nuclear_extent: float = 4.0
    nuclear_points: int = 33
    k: int = 40
    tol: float = 1e-8
    seed: int = 7
    max_iter: int = 4000
    n_states: int = 4
    masses: tuple = (1.0, 10.0, 20.0, 50.0)
    threads: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        for name in ("electron_extent", "nuclear_extent"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("electron_points", "nuclear_points"):
            v = getattr(self, name)
            if v < 3:
                raise ConfigError(f"{name} must be >= 3")
            if v % 2 == 0:
                # X = 0 and Y = 0 must be grid lines for the symmetry and
                # seam machinery
                raise ConfigError(f"{name} must be odd, got {v}")
        if self.n_states < 3:
            raise ConfigError("n_states must be >= 3")
        if self.k < 1 or self.threads < 1:
            raise ConfigError("k and threads must be >= 1")
        if any(m <= 0 for m in self.masses):
            raise ConfigError("masses must be positive")

    @property
    def params(self) -> ModelParams:
        return ModelParams(a=self.a, b=self.b, r0=self.r0, L=self.L, M=self.M)

    def electron_grid(self) -> Grid:
        e = self.electron_extent
        return Grid.centered((e, e), self.electron_points)

    def nuclear_grid(self) -> Grid:
        e = self.nuclear_extent
        return Grid.centered((e, e), self.nuclear_points)

    def full_grid(self) -> Grid:
        e, n = self.electron_extent, self.nuclear_extent
        return Grid.centered((e, e, n, n),
                             (self.electron_points, self.electron_points,
                              self.nuclear_points, self.nuclear_points))

    def with_preset(self, preset: str | None) -> "RunConfig":
        if preset is None:
            return self
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return replace(self, **PRESETS[preset])

    def with_mass(self, M: float) -> "RunConfig":
        return replace(self, M=float(M))


_SCHEMA = {
    "model": {"a": float, "b": float, "r0": float, "L": float, "M": float},
    "electron_grid": {"extent": float, "points": int},
    "nuclear_grid": {"extent": float, "points": int},
    "solver": {"k": int, "tol": float, "seed": int, "max_iter": int},
    "run": {"n_states": int, "masses": "masses", "threads": int, "out_dir": str},
}

_KEYMAP = {
    ("model", "a"): "a", ("model", "b"): "b", ("model", "r0"): "r0",
    ("model", "L"): "L", ("model", "M"): "M",
    ("electron_grid", "extent"): "electron_extent",
    ("electron_grid", "points"): "electron_points",
    ("nuclear_grid", "extent"): "nuclear_extent",
    ("nuclear_grid", "points"): "nuclear_points",
    ("solver", "k"): "k", ("solver", "tol"): "tol",
    ("solver", "seed"): "seed", ("solver", "max_iter"): "max_iter",
    ("run", "n_states"): "n_states", ("run", "masses"): "masses",
    ("run", "threads"): "threads", ("run", "out_dir"): "out_dir",
}


def parse_config(text: str) -> RunConfig:
    """Parse config text; unknown sections/keys raise ConfigError."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case sensitive (L vs l matters)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    kwargs = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ = _SCHEMA[section][key]
            try:
                if typ == "masses":
                    value = tuple(float(t) for t in raw.replace(",", " ").split())
                elif typ is int:
                    value = int(raw)
                elif typ is float:
                    value = float(raw)
                else:
                    value = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
            kwargs[_KEYMAP[(section, key)]] = value
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, preset: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text).with_preset(preset)


def dump_config(cfg: RunConfig) -> str:
    """INI echo of a config; parsing it reproduces the run exactly."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["model"] = {k: format(getattr(cfg, k), ".17g") for k in ("a", "b", "r0", "L", "M")}
    cp["electron_grid"] = {"extent": format(cfg.electron_extent, ".17g"),
                           "points": str(cfg.electron_points)}
    cp["nuclear_grid"] = {"extent": format(cfg.nuclear_extent, ".17g"),
                          "points": str(cfg.nuclear_points)}
    cp["solver"] = {"k": str(cfg.k), "tol": format(cfg.tol, ".17g"),
                    "seed": str(cfg.seed), "max_iter": str(cfg.max_iter)}
    cp["run"] = {"n_states": str(cfg.n_states),
                 "masses": " ".join(format(m, ".17g") for m in cfg.masses),
                 "threads": str(cfg.threads),
                 "out_dir": cfg.out_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
