"""Experiment configuration: named presets, strict key=value files, env overrides.

Files are INI-style with [section] headers. Parsing is strict: unknown
sections or keys are errors, so a typo cannot silently fall back to a preset
constant. Every key can also be overridden through the environment as
POISONREG_<SECTION>_<KEY>=value.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig
from .data_io import RNG_ALGORITHM
from .lr_model import SgdConfig
from .oracles import GridSpec

ENV_PREFIX = "POISONREG"

MODES = ("fixed_small", "fixed_large", "cv_clean", "rmd_minimax")


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _float_list(s: str) -> tuple[float, ...]:
    s = s.strip()
    if ":" in s:  # lo:hi:count linspace shorthand
        lo, hi, count = s.split(":")
        return tuple(np.linspace(float(lo), float(hi), int(count)))
    return tuple(float(v) for v in s.split(",") if v.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


SCHEMA = {
    "experiment": {
        "dataset": str, "modes": _str_list, "fractions": _float_list,
        "repetitions": int, "seed": int, "jobs": int, "out": str,
        "figures": _bool, "histogram_bins": int,
    },
    "data": {
        "n_train": int, "n_val": int, "n_test": int,
        "train_images": str, "train_labels": str,
        "test_images": str, "test_labels": str,
        "class_a": int, "class_b": int,
        "train_csv": str, "test_csv": str, "normalize": _bool,
    },
    "attack": {
        "alpha": float, "beta": float, "t_dp": int, "t_lambda": int,
        "t_mul": int, "inner_eta": float, "inner_t": int,
        "lambda_lo": float, "lambda_hi": float, "box_lo": float, "box_hi": float,
        "group_size": int, "restart": _bool, "stall_window": int,
        "stall_tol": float, "warm_start_lambda": float, "coordinate_mode": str,
    },
    "sgd": {"eta": float, "batch_size": int, "epochs": int},
    "cv": {"k": int, "lambda_grid": _float_list, "selection": str},
    "surface": {
        "resolution": int, "lambda_small": float, "lambda_large": float,
        "lambda_grid": _float_list,
    },
    "meta": {"rng": str, "numpy": str},  # written into outputs, ignored on load
}

_COMMON = {
    "experiment": {
        "modes": MODES, "fractions": (0.0, 0.033, 0.066, 0.1, 0.133, 0.166),
        "repetitions": 10, "seed": 0, "jobs": 1, "out": "out",
        "figures": True, "histogram_bins": 50,
    },
    "attack": {
        "restart": False, "stall_window": 10, "stall_tol": 1e-5,
        "warm_start_lambda": math.log(5.0), "coordinate_mode": "simultaneous",
    },
    "cv": {"k": 5, "lambda_grid": tuple(np.linspace(-8.0, 1.0, 10)),
           "selection": "error"},
}

PRESETS = {
    "synthetic": {
        "experiment": {"dataset": "synthetic"},
        "data": {"n_train": 32, "n_val": 64, "n_test": 400},
        "attack": {
            "alpha": 0.4, "beta": 0.3, "t_dp": 50, "t_lambda": 50, "t_mul": 50,
            "inner_eta": 0.2, "inner_t": 500,
            "lambda_lo": -8.0, "lambda_hi": 6.0,
            "box_lo": -9.5, "box_hi": 9.5, "group_size": 1,
        },
        "sgd": {"eta": 0.2, "batch_size": 32, "epochs": 100},
        "surface": {"resolution": 50, "lambda_small": -8.0,
                    "lambda_large": math.log(20.0),
                    "lambda_grid": tuple(np.linspace(-8.0, 6.0, 15))},
    },
    "mnist08": {
        "experiment": {"dataset": "idx"},
        "data": {"n_train": 512, "n_val": 171, "class_a": 0, "class_b": 8},
        "attack": {
            "alpha": 0.99, "beta": 0.80, "t_dp": 100, "t_lambda": 50, "t_mul": 100,
            "inner_eta": 0.10, "inner_t": 150,
            "lambda_lo": -8.0, "lambda_hi": math.log(200.0),
            "box_lo": 0.0, "box_hi": 1.0, "group_size": 17,
        },
        "sgd": {"eta": 1e-2, "batch_size": 64, "epochs": 200},
    },
    "fmnist": {
        "experiment": {"dataset": "idx"},
        "data": {"n_train": 512, "n_val": 171, "class_a": 0, "class_b": 2},
        "attack": {
            "alpha": 0.90, "beta": 0.30, "t_dp": 100, "t_lambda": 50, "t_mul": 100,
            "inner_eta": 0.08, "inner_t": 200,
            "lambda_lo": -8.0, "lambda_hi": math.log(400.0),
            "box_lo": 0.0, "box_hi": 1.0, "group_size": 17,
        },
        "sgd": {"eta": 1e-2, "batch_size": 64, "epochs": 200},
    },
    "features2048": {
        "experiment": {"dataset": "csv"},
        "data": {"n_train": 512, "n_val": 171, "normalize": True},
        "attack": {
            "alpha": 0.90, "beta": 0.40, "t_dp": 100, "t_lambda": 50, "t_mul": 200,
            "inner_eta": 0.05, "inner_t": 200,
            "lambda_lo": -8.0, "lambda_hi": math.log(20000.0),
            "box_lo": -0.5, "box_hi": 0.5, "group_size": 17,
        },
        "sgd": {"eta": 1e-3, "batch_size": 64, "epochs": 300},
    },
}


@dataclass
class ExperimentConfig:
    """Validated view over the (section, key) -> value map."""

    preset: str
    values: dict

    def get(self, section: str, key: str, default=None):
        return self.values.get((section, key), default)

    def __getitem__(self, sk: tuple[str, str]):
        if sk not in self.values:
            raise ConfigError(f"missing config key [{sk[0]}] {sk[1]}")
        return self.values[sk]

    # ---- builders -------------------------------------------------------

    def sgd_config(self, seed: int = 0) -> SgdConfig:
        return SgdConfig(eta_tr=self["sgd", "eta"],
                         batch_size=self["sgd", "batch_size"],
                         epochs=self["sgd", "epochs"], seed=seed)

    def attack_config(self, seed: int = 0) -> AttackConfig:
        return AttackConfig(
            alpha=self["attack", "alpha"], beta=self["attack", "beta"],
            t_dp=self["attack", "t_dp"], t_lambda=self["attack", "t_lambda"],
            t_mul=self["attack", "t_mul"], inner_eta=self["attack", "inner_eta"],
            inner_t=self["attack", "inner_t"],
            lambda_range=(self["attack", "lambda_lo"], self["attack", "lambda_hi"]),
            eval_sgd=self.sgd_config(seed),
            poison_group_size=self["attack", "group_size"],
            restart_policy=self["attack", "restart"],
            stall_window=self["attack", "stall_window"],
            stall_tol=self["attack", "stall_tol"],
            warm_start_lambda=self["attack", "warm_start_lambda"],
            coordinate_mode=self["attack", "coordinate_mode"], seed=seed)

    def cv_grid(self) -> GridSpec:
        return GridSpec(lambda_values=self["cv", "lambda_grid"])

    def surface_grid(self) -> GridSpec:
        box = ((self["attack", "box_lo"], self["attack", "box_hi"]),) * 2
        return GridSpec(lambda_values=self["surface", "lambda_grid"], box=box,
                        resolution=self["surface", "resolution"])

    def box(self) -> tuple[float, float]:
        return self["attack", "box_lo"], self["attack", "box_hi"]

    def validate(self):
        modes = self["experiment", "modes"]
        for m in modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {MODES}")
        fractions = self["experiment", "fractions"]
        if any(f < 0 or f > 0.2 for f in fractions):
            raise ConfigError("fractions must lie in [0, 0.2]")
        if self["experiment", "repetitions"] < 1:
            raise ConfigError("repetitions must be >= 1")
        dataset = self["experiment", "dataset"]
        required = {
            "synthetic": [("data", "n_train"), ("data", "n_val"), ("data", "n_test")],
            "idx": [("data", k) for k in ("train_images", "train_labels",
                                          "test_images", "test_labels",
                                          "class_a", "class_b", "n_train", "n_val")],
            "csv": [("data", k) for k in ("train_csv", "test_csv",
                                          "n_train", "n_val")],
        }
        if dataset not in required:
            raise ConfigError(f"unknown dataset kind {dataset!r}")
        for sk in required[dataset]:
            if sk not in self.values:
                raise ConfigError(f"dataset={dataset} requires [{sk[0]}] {sk[1]}")


def _parse_value(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        return SCHEMA[section][key](raw)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}")


def load_config(path=None, preset: str = "synthetic",
                overrides: dict | None = None, env=os.environ) -> ExperimentConfig:
    """Preset defaults, then file, then environment, then explicit overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    values = {}
    for source in (_COMMON, PRESETS[preset]):
        for section, kv in source.items():
            for key, val in kv.items():
                values[(section, key)] = val
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str.lower
        with open(path) as f:
            parser.read_file(f)
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[(section.lower(), key)] = _parse_value(section.lower(), key, raw)
    for section, keys in SCHEMA.items():
        for key in keys:
            env_key = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
            if env_key in env:
                values[(section, key)] = _parse_value(section, key, env[env_key])
    for (section, key), val in (overrides or {}).items():
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override [{section}] {key}")
        values[(section, key)] = val
    cfg = ExperimentConfig(preset=preset, values=values)
    cfg.validate()
    return cfg


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    return repr(val) if isinstance(val, float) else str(val)


def write_config(cfg: ExperimentConfig, path):
    """Effective config, loadable as-is; reproduces the run byte for byte."""
    sections: dict[str, list] = {}
    for (section, key), val in sorted(cfg.values.items()):
        sections.setdefault(section, []).append((key, val))
    with open(path, "w") as f:
        f.write(f"# preset: {cfg.preset}\n")
        for section in sorted(sections):
            f.write(f"[{section}]\n")
            for key, val in sections[section]:
                f.write(f"{key} = {_format_value(val)}\n")
            f.write("\n")
        f.write("[meta]\n")
        f.write(f"rng = {RNG_ALGORITHM}\n")
        f.write(f"numpy = {np.__version__}\n")
