"""Layered run configuration: defaults, YAML file, dotted overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


# every run key exists here; files and --set overrides may only refine them.
# dict-valued leaves marked open (checkpoints) accept arbitrary sub-keys.
DEFAULTS = {
    "dataset": {
        "kind": "synthetic",             # synthetic | raster
        "num_classes": 100,
        "instances_per_class": 600,
        "feature_dim": 64,
        "class_center_scale": 1.0,
        "within_class_sigma": 1.0,
        "image_size": 32,                # raster only
        "channels": 3,                   # raster only
        "split_fractions": [0.64, 0.16, 0.20],
        "seed": 7,
        "path": None,                    # npz file; None generates in memory
    },
    "episode": {
        "n_way": 5,
        "k_shot": 1,
        "n_query": 15,
        "n_unlabeled": 0,
        "distractors": 0,
    },
    "model": {
        "mode": "feature",
        "feature_dim": 64,
        "input_shape": None,
        "encoder": "identity",
        "encoder_hidden": [256, 128],
        "temp_hidden": [512, 128],
        "temperature_floor": 1e-3,
        "weighting": "mi",
        "weight_generator": "attention",
        "attention_dim": 128,
        "attention_heads": 4,
        "mlp_hidden": [128, 128],
        "iterations": 6,
        "pipeline": [],
        "init_seed": 0,
    },
    "train": {
        "episodes": 5000,
        "lam": 0.5,
        "lr": 1e-3,
        "encoder_lr": 1e-4,
        "momentum": 0.9,
        "val_interval": 500,
        "val_episodes": 600,
        "val_seed": None,
        "val_predict": "a0",
        "log_interval": 1,
        "seed": 0,
    },
    "eval": {
        "split": "test",
        "episodes": 600,
        "seed": 0,
        "predict": "a0",
        "iterations": None,
        "checkpoint": None,
        "workers": None,                 # None: flag, env var, or 1
        "min_accuracy": None,            # --check threshold, percent
    },
    "ablation": {
        "axis": "T_sweep",
        "grid": [0, 1, 2, 4, 6],
        "episodes": 600,
        "seed": 0,
        "split": "test",
        "checkpoint": None,              # single model for protocol axes
        "checkpoints": {},               # label -> path for variant axes
        "check_ordering": None,          # --check: labels, non-decreasing
    },
    "export": {
        "episodes": 3000,
        "top_k": 3,
        "seed": 0,
        "split": "test",
        "checkpoints": {},               # label -> path
    },
}

# dict leaves that accept arbitrary keys (checkpoint label maps)
_OPEN_LEAVES = {("ablation", "checkpoints"), ("export", "checkpoints")}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, overlay: dict, trail: tuple) -> None:
    for key, value in overlay.items():
        path = trail + (key,)
        dotted = ".".join(path)
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict) and path not in _OPEN_LEAVES:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be a section")
            _merge(base[key], value, path)
        else:
            base[key] = value


def load_config(path=None) -> dict:
    """Defaults overlaid with an optional YAML file; unknown keys rejected."""
    cfg = default_config()
    if path is not None:
        raw = Path(path).read_text()
        loaded = yaml.safe_load(raw)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a key-value tree")
        _merge(cfg, loaded, ())
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply repeatable ``--set section.key=value`` pairs; flag wins."""
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = cfg
        for depth, key in enumerate(keys[:-1]):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[key]
        leaf = keys[-1]
        open_leaf = tuple(keys[:-1]) in _OPEN_LEAVES
        if not isinstance(node, dict) or (leaf not in node and not open_leaf):
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(node.get(leaf), dict) and tuple(keys) not in _OPEN_LEAVES:
            raise ConfigError(f"config key {dotted!r} is a section, not a value")
        node[leaf] = yaml.safe_load(raw)
    return cfg


def config_fingerprint(cfg: dict) -> str:
    """Hash of the resolved tree, stable under key order."""
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_snapshot(cfg: dict, path) -> str:
    """Write the resolved config (with its fingerprint) next to the outputs."""
    fingerprint = config_fingerprint(cfg)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# fingerprint: {fingerprint}\n")
        yaml.safe_dump(cfg, fh, sort_keys=True)
    return fingerprint
