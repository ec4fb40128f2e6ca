"""Experiment configuration: nested YAML/JSON mapping with defaults and schema checks."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import yaml

from .room import PAPER_ROOMS, PAPER_T60S

OUTPUT_ENV = "SAECLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


DEFAULTS = {
    "seed": 0,
    "output_dir": "runs",
    "jobs": 1,
    "corpus": {"near_dir": None, "far_dir": None, "noise_dir": None},
    "dataset": {"duration": 2.0, "sample_rate": 16000, "utterances_per_far_end": 3,
                "near_fraction": [0.4, 0.7], "mic_level_dbfs": -25.0},
    "grid": {
        "rooms": [list(PAPER_ROOMS[0])],
        "t60": [PAPER_T60S[0]],
        "ser_db": [0.0, 5.0],
        "snr_db": [10.0, 20.0],
        "noise": ["babble"],
        "talker_distance": 0.7,
        "utterances": 3,
        "modes": ["double"],
    },
    "algo": {
        "name": "wiener",
        "nlms": {"filter_len": 1600, "mu": 0.5, "delta": 1e-6},
        "wiener": {"alpha_psd": 0.92, "gain_floor": 0.05},
        "checkpoint": None,
    },
    "train": {"scale": 4, "taps": 10, "stage1_epochs": 300, "stage2_epochs": 100,
              "lr": 3e-4, "batch_size": 2, "seed": 0},
}

NUMBER = (int, float)
# leaf schema: key path -> (accepted types, validator or None, message)
_ALGOS = ("none", "nlms", "wiener", "neural", "neural-stage1")


def _positive(v):
    return v > 0


def _list_of(types, check=None):
    def ok(v):
        return isinstance(v, list) and len(v) > 0 and all(
            isinstance(x, types) and not isinstance(x, bool) and (check is None or check(x)) for x in v)
    return ok


def _room(v):
    return isinstance(v, list) and len(v) == 3 and all(isinstance(x, NUMBER) and x > 0 for x in v)


SCHEMA = {
    "seed": (int, lambda v: v >= 0, "a non-negative integer"),
    "output_dir": (str, None, "a path"),
    "jobs": (int, lambda v: v >= 1, "an integer >= 1"),
    "corpus.near_dir": ((str, type(None)), None, "a directory or null"),
    "corpus.far_dir": ((str, type(None)), None, "a directory or null"),
    "corpus.noise_dir": ((str, type(None)), None, "a directory or null"),
    "dataset.duration": (NUMBER, _positive, "a positive number of seconds"),
    "dataset.sample_rate": (int, _positive, "a positive integer"),
    "dataset.utterances_per_far_end": (int, _positive, "a positive integer"),
    "dataset.near_fraction": (list, lambda v: len(v) == 2 and 0 < v[0] <= v[1] <= 1,
                              "[lo, hi] with 0 < lo <= hi <= 1"),
    "dataset.mic_level_dbfs": ((int, float, type(None)), lambda v: v <= 0, "a level <= 0 dBFS or null"),
    "grid.rooms": (list, lambda v: len(v) > 0 and all(_room(r) for r in v),
                   "a non-empty list of [x, y, z] room sizes"),
    "grid.t60": (list, _list_of(NUMBER, _positive), "a non-empty list of positive seconds"),
    "grid.ser_db": (list, _list_of(NUMBER), "a non-empty list of dB values"),
    "grid.snr_db": (list, _list_of(NUMBER), "a non-empty list of dB values"),
    "grid.noise": (list, _list_of(str, lambda s: s in ("white", "babble", "home")),
                   "a non-empty list drawn from white, babble, home"),
    "grid.talker_distance": (NUMBER, _positive, "a positive distance in metres"),
    "grid.utterances": (int, _positive, "a positive integer"),
    "grid.modes": (list, _list_of(str, lambda s: s in ("double", "single")),
                   "a non-empty list drawn from double, single"),
    "algo.name": (str, lambda s: s in _ALGOS, f"one of {', '.join(_ALGOS)}"),
    "algo.nlms.filter_len": (int, _positive, "a positive integer"),
    "algo.nlms.mu": (NUMBER, lambda v: 0 < v <= 2, "in (0, 2]"),
    "algo.nlms.delta": (NUMBER, _positive, "positive"),
    "algo.wiener.alpha_psd": (NUMBER, lambda v: 0 < v < 1, "in (0, 1)"),
    "algo.wiener.gain_floor": (NUMBER, lambda v: 0 <= v < 1, "in [0, 1)"),
    "algo.checkpoint": ((str, type(None)), None, "a checkpoint path or null"),
    "train.scale": (int, _positive, "a positive integer"),
    "train.taps": (int, _positive, "a positive integer"),
    "train.stage1_epochs": (int, lambda v: v >= 0, "a non-negative integer"),
    "train.stage2_epochs": (int, lambda v: v >= 0, "a non-negative integer"),
    "train.lr": (NUMBER, lambda v: v >= 0, "a non-negative number"),
    "train.batch_size": (int, _positive, "a positive integer"),
    "train.seed": (int, lambda v: v >= 0, "a non-negative integer"),
}


def _merge(base, override, prefix=""):
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be a mapping")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def _get(cfg, path):
    node = cfg
    for part in path.split("."):
        node = node[part]
    return node


def validate(cfg: dict) -> dict:
    for path, (types, check, what) in SCHEMA.items():
        v = _get(cfg, path)
        bad_bool = isinstance(v, bool) and bool not in (types if isinstance(types, tuple) else (types,))
        if bad_bool or not isinstance(v, types) or (check is not None and v is not None and not check(v)):
            raise ConfigError(f"{path} must be {what}, got {v!r}")
    return cfg


def defaults() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path`` (YAML or JSON), then ``overrides``; validated."""
    cfg = defaults()
    if path is not None:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    return validate(cfg)


def output_root(cfg: dict) -> Path:
    """The environment variable wins over the config value."""
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output_dir"])


def dump(cfg: dict, fmt: str = "yaml") -> str:
    if fmt == "json":
        return json.dumps(cfg, indent=2)
    return yaml.safe_dump(cfg, sort_keys=False)
