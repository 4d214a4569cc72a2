"""Run configuration as a single JSON document.

The CLI resolves a config in three layers: built-in defaults, an optional
JSON file (--config), then individual dotted-key overrides (--set a.b=v).
Values on the command line are parsed as JSON where possible so numbers,
booleans, and lists round-trip; everything else stays a string.
"""

import copy
import json
import math
import os
from pathlib import Path

from .fields import Grid1D
from .training import METHODS, TrainConfig

EXPERIMENTS = ("elu", "elliptic")

DEFAULTS = {
    "experiment": "elu",
    "out": None,  # output root; GENUQ_OUT, then ./genuq-out when unset
    "data": {
        "n_samples": 2048,
        "grid_n": 64,
        "seed": 2024,
        "path": None,  # derived from the fields above when unset
    },
    "train": {
        "method": "genuq",
        "lr_stages": [1e-3, 1e-4, 1e-5, 1e-6],
        "epochs_per_stage": 400,
        "batch_size": 64,
        "n_z": 8,
        "beta": 1.0,
        "mask_proportion": 0.001,
        "latent_fraction": 0.75,
        "dropout_rate": 0.1,
        "d_pod": 20,
        "init_seed": 0,
        "mask_seed": 1,
        "shuffle_seed": 2,
        "latent_seed": 3,
        "val_seed": 4,
    },
    "eval": {
        "n_ensemble": 128,
        "seed": 7,
        "band_levels": [0.025, 0.975],
        "band_input": 0,  # index into the test split for the band figure
        "hist_points": [0.6],
        "hist_bins": 30,
        "scatter_x0": 0.6,
        "scatter_x1": [1.2, 3.1],
        "mean_l2": False,
        "n_mean": 8192,
        "thresholds": [],
    },
    "sweep": {
        "mask_proportions": [0.001, 0.004, 0.016, 0.064, 0.256],
        "latent_fractions": [0.25, 0.5, 0.75, 1.0],
        "seed": 11,
        "n_ensemble": 128,
        "n_mean": 8192,
    },
}


class ConfigError(ValueError):
    pass


def default_config():
    return copy.deepcopy(DEFAULTS)


def _merge(base, extra, path=""):
    for key, value in extra.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, here)
        else:
            base[key] = value
    return base


def load_config(path=None):
    cfg = default_config()
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge(cfg, loaded)
    return cfg


def apply_overrides(cfg, assignments):
    """Apply --set entries of the form dotted.key=value in order."""
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return cfg


def validate_config(cfg):
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    d = cfg["data"]
    if not isinstance(d["n_samples"], int) or d["n_samples"] < 5:
        raise ConfigError("data.n_samples must be an integer >= 5")
    if not isinstance(d["grid_n"], int) or d["grid_n"] < 16:
        raise ConfigError("data.grid_n must be an integer >= 16")
    t = cfg["train"]
    if t["method"] not in METHODS:
        raise ConfigError(f"train.method must be one of {METHODS}")
    if not (0.0 < t["mask_proportion"] <= 1.0):
        raise ConfigError("train.mask_proportion must be in (0, 1]")
    if not (0.0 < t["latent_fraction"] <= 1.0):
        raise ConfigError("train.latent_fraction must be in (0, 1]")
    if not (0.0 < t["beta"] < 2.0):
        raise ConfigError("train.beta must be in (0, 2)")
    if t["epochs_per_stage"] < 1 or not t["lr_stages"]:
        raise ConfigError("train needs at least one stage and one epoch")
    if any(lr <= 0 or not math.isfinite(lr) for lr in t["lr_stages"]):
        raise ConfigError("train.lr_stages must be positive and finite")
    s = cfg["sweep"]
    for r in s["mask_proportions"]:
        if not (0.0 < r <= 1.0):
            raise ConfigError("sweep.mask_proportions must be in (0, 1]")
    for f in s["latent_fractions"]:
        if not (0.0 < f <= 1.0):
            raise ConfigError("sweep.latent_fractions must be in (0, 1]")
    return cfg


def grid_from(cfg):
    n = cfg["data"]["grid_n"]
    if cfg["experiment"] == "elu":
        return Grid1D(n=n, start=0.0, end=2.0 * math.pi, periodic=True)
    return Grid1D(n=n, start=-1.0, end=1.0, periodic=False)


def train_config_from(cfg):
    t = cfg["train"]
    return TrainConfig(
        method=t["method"],
        lr_stages=tuple(float(lr) for lr in t["lr_stages"]),
        epochs_per_stage=int(t["epochs_per_stage"]),
        batch_size=int(t["batch_size"]),
        n_z=int(t["n_z"]),
        beta=float(t["beta"]),
        mask_proportion=float(t["mask_proportion"]),
        latent_fraction=float(t["latent_fraction"]),
        dropout_rate=float(t["dropout_rate"]),
        d_pod=int(t["d_pod"]),
        init_seed=int(t["init_seed"]),
        mask_seed=int(t["mask_seed"]),
        shuffle_seed=int(t["shuffle_seed"]),
        latent_seed=int(t["latent_seed"]),
        val_seed=int(t["val_seed"]),
    )


def out_root(cfg, flag_out=None):
    if flag_out is not None:
        return Path(flag_out)
    if cfg.get("out"):
        return Path(cfg["out"])
    env = os.environ.get("GENUQ_OUT")
    if env:
        return Path(env)
    return Path("genuq-out")


def dataset_path(cfg, root):
    if cfg["data"]["path"]:
        return Path(cfg["data"]["path"])
    d = cfg["data"]
    name = f"{cfg['experiment']}_n{d['n_samples']}_g{d['grid_n']}_s{d['seed']}.gqds"
    return Path(root) / "data" / name
