"""Checkpoint IO: JSON manifest + flat little-endian float64 parameter blob.

A checkpoint is a pair of files <base>.json / <base>.bin. The manifest lists
every parameter in order with its shape and byte offset, plus an `extra` dict
(model spec, epoch, metrics, optimizer state, ...). Reload is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "geomflow-checkpoint-v1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "shape": list(obj.shape)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=float).reshape(obj["shape"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjsonable(v) for v in obj]
    return obj


def save_checkpoint(base, named_arrays, extra=None):
    """Write the ordered (name, array) pairs and manifest to <base>.{json,bin}."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    chunks = []
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())  # C-order copy regardless of input layout
        offset += arr.nbytes
    with open(base.with_suffix(".bin"), "wb") as fh:
        fh.write(b"".join(chunks))
    manifest = {
        "format": FORMAT,
        "params": index,
        "total_bytes": offset,
        "extra": _jsonable(extra or {}),
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(base):
    """Read back (ordered dict name -> array, extra dict); bit-exact."""
    base = Path(base)
    with open(base.with_suffix(".json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {base}.json")
    blob = Path(base.with_suffix(".bin")).read_bytes()
    out = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f8", count=count, offset=entry["offset"]
        ).reshape(shape)
        out[entry["name"]] = arr.copy()
    return out, _unjsonable(manifest.get("extra", {}))
