"""Versioned JSON checkpoints for parameter sets."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import ParamSet

FORMAT_VERSION = 1


def save_checkpoint(path, params: ParamSet, meta: dict | None = None) -> None:
    """Write parameters, step counter, and metadata as versioned JSON."""
    payload = {
        "format_version": FORMAT_VERSION,
        "step": params.step,
        "meta": meta or {},
        "params": [
            {"name": name, "shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in params.items()
        ],
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], int, dict]:
    """Read a checkpoint; returns (name -> array, step, meta).

    Raises ValueError on a missing or unsupported format version and on
    shape/value inconsistencies.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = json.loads(path.read_text())
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {version!r} in {path} "
            f"(expected {FORMAT_VERSION})"
        )
    values: dict[str, np.ndarray] = {}
    for rec in payload["params"]:
        arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values for parameter {rec['name']!r} in {path}")
        values[rec["name"]] = arr
    return values, int(payload.get("step", 0)), payload.get("meta", {})


def restore_params(params: ParamSet, path) -> dict:
    """Load a checkpoint into an existing ParamSet; returns the meta dict."""
    values, step, meta = load_checkpoint(path)
    params.load_values(values)
    params.step = step
    return meta
