"""Checkpoint persistence: JSON manifest plus a raw float32 blob.

The manifest lists every tensor as ``{name, dims, dtype: "f32",
offset_bytes}`` in canonical parameter order; the blob concatenates the
row-major little-endian float32 payloads at those offsets. Loading is
therefore possible from any language, and a save/load round trip reproduces
every tensor bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import DetectorConfig
from .errors import BlobSizeMismatch, NonFiniteTensor, UnknownTensorName
from .ioutil import atomic_write_bytes, atomic_write_text
from .kernels import ParamStore

MANIFEST_FORMAT = "fusion-checkpoint-v1"


@dataclass
class Checkpoint:
    params: ParamStore
    config: DetectorConfig
    training_meta: dict[str, Any] = field(default_factory=dict)


def _blob_path(manifest_path: Path) -> Path:
    if manifest_path.suffix:
        return manifest_path.with_suffix(".bin")
    return manifest_path.parent / (manifest_path.name + ".bin")


def save_checkpoint(
    params: ParamStore,
    config: DetectorConfig,
    path: str | Path,
    training_meta: dict[str, Any] | None = None,
) -> None:
    """Write manifest at ``path`` and the blob beside it (same stem, .bin)."""
    manifest_path = Path(path)
    blob_path = _blob_path(manifest_path)

    tensors = []
    chunks = []
    offset = 0
    for name, value in params.items():
        if not np.isfinite(value).all():
            raise NonFiniteTensor(name)
        payload = np.ascontiguousarray(value, dtype="<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "dims": list(value.shape),
                "dtype": "f32",
                "offset_bytes": offset,
            }
        )
        chunks.append(payload)
        offset += len(payload)

    manifest = {
        "format": MANIFEST_FORMAT,
        "blob": blob_path.name,
        "blob_bytes": offset,
        "tensors": tensors,
        "config": config.to_dict(),
        "training_meta": training_meta or {},
    }
    atomic_write_bytes(blob_path, b"".join(chunks))
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load and validate a checkpoint; tensors come back bit-exact."""
    manifest_path = Path(path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    config = DetectorConfig.from_dict(manifest["config"])
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()

    declared = int(manifest.get("blob_bytes", len(blob)))
    if declared != len(blob):
        raise BlobSizeMismatch(declared, len(blob))

    from .detector import param_names  # local import to avoid a cycle

    expected = param_names(config)
    found = [entry["name"] for entry in manifest["tensors"]]
    for name in found:
        if name not in expected:
            raise UnknownTensorName(name)
    for name in expected:
        if name not in found:
            raise UnknownTensorName(name, detail="checkpoint is missing tensor")

    store = ParamStore()
    total = 0
    for entry in manifest["tensors"]:
        rows, cols = entry["dims"]
        nbytes = rows * cols * 4
        start = entry["offset_bytes"]
        if start + nbytes > len(blob):
            raise BlobSizeMismatch(start + nbytes, len(blob))
        tensor = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=start)
        tensor = tensor.reshape(rows, cols).astype(np.float32, copy=True)
        if not np.isfinite(tensor).all():
            raise NonFiniteTensor(entry["name"])
        store.add(entry["name"], tensor)
        total += nbytes
    if total != len(blob):
        raise BlobSizeMismatch(total, len(blob))
    return Checkpoint(params=store, config=config, training_meta=manifest.get("training_meta", {}))
