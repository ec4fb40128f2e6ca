"""Checkpoints: ``<stem>.bin`` holds little-endian doubles back to back,
``<stem>.json`` holds the model config and one (name, shape, offset) entry per tensor."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..dsp import ParameterError
from .model import ModelConfig, SaesModel


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(model: SaesModel, path, extra: dict | None = None) -> None:
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in model.params().items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size
    bin_path.write_bytes(b"".join(chunks))
    manifest = {"config": model.cfg.to_dict(), "params": entries, "count": offset}
    if extra:
        manifest["extra"] = extra
    json_path.write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path) -> SaesModel:
    bin_path, json_path = _paths(path)
    manifest = json.loads(json_path.read_text())
    model = SaesModel(ModelConfig.from_dict(manifest["config"]))
    flat = np.frombuffer(bin_path.read_bytes(), dtype="<f8")
    if flat.size != manifest["count"]:
        raise ParameterError(f"{bin_path}: {flat.size} values, manifest expects {manifest['count']}")
    params = model.params()
    for e in manifest["params"]:
        if e["name"] not in params:
            raise ParameterError(f"checkpoint tensor {e['name']} unknown to this model layout")
        target = params[e["name"]]
        if list(target.shape) != e["shape"]:
            raise ParameterError(f"{e['name']}: shape {e['shape']} vs model {list(target.shape)}")
        target[...] = flat[e["offset"]:e["offset"] + target.size].reshape(target.shape)
    return model
