"""Named-tensor checkpoints.

A checkpoint is a directory holding ``params.bin`` (every tensor's values,
little-endian, concatenated in manifest order) and ``manifest.json``
(name, dtype, shape, byte offset and length per tensor, plus free-form
metadata). Loading checks names and shapes against the receiving model.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointError(RuntimeError):
    pass


def save(path: str | Path, tensors: Mapping[str, Tensor | np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / BLOB, "wb") as fh:
        for name in sorted(tensors):
            value = tensors[name]
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(le).tobytes()
            fh.write(raw)
            entries.append(
                {
                    "name": name,
                    "dtype": arr.dtype.newbyteorder("<").str,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            offset += len(raw)
    digest = hashlib.sha256((path / BLOB).read_bytes()).hexdigest()
    manifest = {"tensors": entries, "sha256": digest, "metadata": metadata or {}}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not (path / MANIFEST).exists():
        raise CheckpointError(f"no checkpoint manifest at {path / MANIFEST}")
    manifest = json.loads((path / MANIFEST).read_text())
    blob = (path / BLOB).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CheckpointError(f"checksum mismatch in {path / BLOB}")
    arrays = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, manifest.get("metadata", {})


def assign(targets: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
    """Copy ``arrays`` into same-named tensors, verifying shapes."""
    missing = sorted(set(targets) - set(arrays))
    unexpected = sorted(set(arrays) - set(targets))
    if strict and (missing or unexpected):
        raise CheckpointError(f"parameter names differ: missing={missing[:5]} unexpected={unexpected[:5]}")
    for name, tensor in targets.items():
        if name not in arrays:
            continue
        arr = arrays[name]
        if tuple(arr.shape) != tensor.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {tuple(arr.shape)} vs model {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype, copy=True)
