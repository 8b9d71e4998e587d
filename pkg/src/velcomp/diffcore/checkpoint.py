"""Parameter checkpoint files.

A checkpoint is a NumPy ``.npz`` archive with:

* ``__meta__``: a JSON document ``{"format": "velcomp-checkpoint",
  "version": 1, "config_hash": ..., "extra": {...}, "params": [{"name",
  "shape"}...], "buffers": [...]}``;
* ``param/<name>``: one float64 array per learned parameter block;
* ``buffer/<name>``: non-learned state such as batchnorm running statistics.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Module

FORMAT = "velcomp-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, module: Module, config_hash: str = "", extra: dict | None = None) -> Path:
    path = Path(path)
    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config_hash": config_hash,
        "extra": extra or {},
        "params": [{"name": k, "shape": list(v.data.shape)} for k, v in params.items()],
        "buffers": [{"name": k, "shape": list(v.shape)} for k, v in buffers.items()],
    }
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    arrays.update({f"buffer/{k}": v for k, v in buffers.items()})
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return _meta(data, path)


def _meta(data, path) -> dict:
    if "__meta__" not in data:
        raise CheckpointError(f"{path}: not a checkpoint (missing header)")
    meta = json.loads(str(data["__meta__"]))
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path, module: Module) -> dict:
    """Load parameters and buffers into ``module`` in place; return the header."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = _meta(data, path)
        params = dict(module.named_parameters())
        stored = {p["name"] for p in meta["params"]}
        if stored != set(params):
            missing = sorted(set(params) - stored)
            unexpected = sorted(stored - set(params))
            raise CheckpointError(f"{path}: parameter mismatch, missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            arr = data[f"param/{name}"]
            if arr.shape != p.data.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {p.data.shape}")
            p.data[...] = arr
        for b in meta["buffers"]:
            module.set_buffer(b["name"], data[f"buffer/{b['name']}"])
    return meta
