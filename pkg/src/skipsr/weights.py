"""Weight files: a JSON manifest next to a flat float32 little-endian blob.

The manifest lists tensors in blob order as ``{"name", "shape"}`` entries and
names the blob file relative to itself.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def save_weights(path, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = path.with_suffix(".bin")
    entries = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    manifest = dict(manifest, tensors=entries, blob=blob.name, dtype="<f4")
    flat = [np.ascontiguousarray(v, dtype="<f4").ravel() for v in tensors.values()]
    blob.write_bytes(np.concatenate(flat).tobytes() if flat else b"")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_weights(path, dtype=np.float64) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    raw = np.frombuffer((path.parent / manifest["blob"]).read_bytes(), dtype="<f4")
    total = sum(math.prod(e["shape"]) for e in manifest["tensors"])
    if raw.size != total:
        raise ValueError(f"{path}: blob holds {raw.size} values, manifest expects {total}")
    tensors, off = {}, 0
    for e in manifest["tensors"]:
        n = math.prod(e["shape"])
        tensors[e["name"]] = raw[off:off + n].reshape(e["shape"]).astype(dtype)
        off += n
    return manifest, tensors
