"""Run configuration: flat YAML mapping with every default embedded.

Unknown keys and wrong types are configuration errors. Lists stay lists; the
nested material parameters are flat keys prefixed with ``mat_``.
"""
from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path

import yaml

from .. import binio
from ..deeponet import ArchConfig, TrainConfig
from ..errors import ConfigError, ParameterError
from ..insult import CylindricalGrid, RandomInsultParams
from ..vessel import MaterialParams

DEFAULTS: dict = {
    "out_dir": "runs",
    "seed": 0,
    "jobs": 1,
    "backend": "auto",
    # grid
    "n_z": 21,
    "n_theta": 20,
    # analytic sweep (mm and degrees)
    "z_od_mm": [2.0, 3.0, 4.0],
    "z_apex_mm": [6.0, 7.5, 9.0],
    "z_od_restricted_mm": 4.0,
    "z_apex_restricted_mm": [7.5],
    "theta_od_deg": [20.0, 100.0, 180.0, 260.0, 360.0],
    "theta_apex_deg": [0.0, 90.0, 180.0, 270.0],
    "theta_end": 0.0,
    "theta_peak": 1.0,
    "nu_z": 2.0,
    "nu_theta": 2.0,
    # severity ranges [low, high] with evenly spaced levels
    "severity_levels": 5,
    "severity_elastic_normotensive": [0.0595, 0.595],
    "severity_elastic_hypertensive": [0.0475, 0.475],
    "severity_mechano_normotensive": [0.0184, 0.184],
    "severity_mechano_hypertensive": [0.0108, 0.108],
    # random insults
    "random_profiles": 10,
    "random_levels_per_kind": 5,
    "random_severity_elastic": [0.06, 0.60],
    "random_severity_mechano": [0.025, 0.20],
    "random_propensity": 0.35,
    "random_softness": 0.2,
    "random_length_theta_mm": 2.0,
    "random_length_z_mm": 2.0,
    "random_k_boundary": 2.0,
    # dataset
    "test_frac": 0.1,
    "location_encoding": "trig",
    # network
    "q": 128,
    "fnn_depth": 4,
    "fnn_width": 128,
    "trunk_depth": 4,
    "trunk_width": 128,
    "cnn_filters": [8, 16],
    "cnn_kernel": 3,
    "activation": "tanh",
    # training
    "adam_iters": 20000,
    "lr": 1.0e-3,
    "lbfgs_iters": 2000,
    "trials": 5,
    "noise": 0.05,
    "log_every": 0,
}

_MAT_FIELDS = {f.name: f for f in fields(MaterialParams)}


def _mat_key(name: str) -> str:
    return f"mat_{name}"


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, str):
        return isinstance(value, str)
    return True


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        for name, f in _MAT_FIELDS.items():
            self.values[_mat_key(name)] = f.default
        for key, val in (values or {}).items():
            self.set(key, val)

    def set(self, key: str, value) -> None:
        if key not in self.values:
            raise ConfigError(f"unknown configuration key {key!r}")
        default = self.values[key]
        if not _type_ok(default, value):
            raise ConfigError(f"key {key!r} expects {type(default).__name__}, got {value!r}")
        if isinstance(default, float):
            value = float(value)
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def digest(self) -> str:
        return binio.config_hash(self.values)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"configuration file {p} not found")
            try:
                data = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{p}: not valid YAML ({exc})") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
        data.update(overrides or {})
        cfg = cls(data)
        cfg.validate()
        return cfg

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.values, sort_keys=True))

    # -- typed views ------------------------------------------------------------

    def validate(self) -> None:
        for key in ("severity_elastic_normotensive", "severity_elastic_hypertensive",
                    "severity_mechano_normotensive", "severity_mechano_hypertensive",
                    "random_severity_elastic", "random_severity_mechano"):
            lo_hi = self.values[key]
            if len(lo_hi) != 2 or not (0 < lo_hi[0] <= lo_hi[1] < 1):
                raise ConfigError(f"{key} must be [low, high] with 0 < low <= high < 1")
        if self.values["severity_levels"] < 1 or self.values["random_levels_per_kind"] < 1:
            raise ConfigError("severity level counts must be positive")
        if not 0 < self.values["test_frac"] < 1:
            raise ConfigError("test_frac must lie in (0, 1)")
        if self.values["trials"] < 1:
            raise ConfigError("trials must be at least 1")
        sizes = ("q", "fnn_depth", "fnn_width", "trunk_depth", "trunk_width", "cnn_kernel")
        if any(self.values[k] < 1 for k in sizes) or not all(int(f) >= 1 for f in self.values["cnn_filters"]):
            raise ConfigError(f"network sizes ({', '.join(sizes)}, cnn_filters) must be positive")
        if self.values["adam_iters"] < 0 or self.values["lbfgs_iters"] < 0 or not self.values["lr"] > 0:
            raise ConfigError("iteration counts must be non-negative and lr positive")
        if self.values["noise"] < 0:
            raise ConfigError("noise must be non-negative")
        if self.values["activation"] not in ("tanh", "identity"):
            raise ConfigError(f"unsupported activation {self.values['activation']!r}")
        if self.values["location_encoding"] not in ("trig", "distance"):
            raise ConfigError(f"unknown location encoding {self.values['location_encoding']!r}")
        try:
            self.grid()
            self.material()
            self.random_params()
            self.arch()
        except (ParameterError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self) -> CylindricalGrid:
        mat = self.material()
        return CylindricalGrid(self["n_z"], self["n_theta"], mat.l_o, mat.r_o)

    def material(self) -> MaterialParams:
        return MaterialParams(**{name: self.values[_mat_key(name)] for name in _MAT_FIELDS})

    def random_params(self) -> RandomInsultParams:
        return RandomInsultParams(
            self["random_propensity"], self["random_softness"], self["random_length_theta_mm"],
            self["random_length_z_mm"], self["random_k_boundary"],
        )

    def arch(self) -> ArchConfig:
        return ArchConfig(
            q=self["q"], fnn_depth=self["fnn_depth"], fnn_width=self["fnn_width"],
            trunk_depth=self["trunk_depth"], trunk_width=self["trunk_width"],
            cnn_filters=tuple(int(f) for f in self["cnn_filters"]), cnn_kernel=self["cnn_kernel"],
            activation=self["activation"], location_dim=3 if self["location_encoding"] == "trig" else 1,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self["adam_iters"], self["lr"], self["lbfgs_iters"], self["seed"], self["trials"],
                           self["log_every"])

    @property
    def backend(self) -> str | None:
        b = self["backend"]
        return None if b == "auto" else b
