"""Checkpoint format: a JSON manifest plus one little-endian float32 blob.

``save_checkpoint("run/best", ...)`` writes ``run/best.json`` and
``run/best.bin``. The manifest records the format version, the model config,
the seed, free-form extras, and for every array its path, shape and byte
offset into the blob; loading validates shapes and offsets against the blob
before returning anything.
"""

from __future__ import annotations

import json
import os
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def _as_float32_array(value) -> np.ndarray:
    if hasattr(value, "detach"):  # torch tensor
        value = value.detach().cpu().numpy()
    return np.ascontiguousarray(np.asarray(value), dtype="<f4")


def save_checkpoint(
    base_path: str,
    arrays: Mapping[str, np.ndarray],
    config: Optional[dict] = None,
    seed: int = 0,
    extras: Optional[dict] = None,
) -> None:
    entries = []
    chunks = []
    offset = 0
    for path in arrays:  # insertion order; loaders go by the manifest anyway
        arr = _as_float32_array(arrays[path])
        entries.append({"path": path, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "seed": seed,
        "extras": extras or {},
        "blob_bytes": offset,
        "params": entries,
    }
    os.makedirs(os.path.dirname(base_path) or ".", exist_ok=True)
    with open(base_path + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(base_path + ".bin", "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(base_path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    """Returns (arrays, manifest); raises DataError on any inconsistency."""
    try:
        with open(base_path + ".json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"{base_path}.json: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{base_path}: format version {manifest.get('format_version')!r} unsupported"
        )
    try:
        with open(base_path + ".bin", "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"{base_path}.bin: unreadable blob ({exc})") from exc
    if len(blob) != manifest.get("blob_bytes"):
        raise DataError(
            f"{base_path}.bin: blob holds {len(blob)} bytes, manifest says "
            f"{manifest.get('blob_bytes')}"
        )
    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        start = entry["offset"]
        if start < 0 or start + nbytes > len(blob):
            raise DataError(f"{base_path}: {entry['path']!r} offsets fall outside the blob")
        arrays[entry["path"]] = np.frombuffer(
            blob, dtype="<f4", count=nbytes // 4, offset=start
        ).reshape(shape).copy()
    return arrays, manifest


def arrays_to_state_dict(arrays: Mapping[str, np.ndarray], reference) -> dict:
    """Cast loaded arrays onto a model's state-dict dtypes/shapes."""
    import torch

    out = {}
    ref = reference.state_dict() if hasattr(reference, "state_dict") else reference
    if set(ref) != set(arrays):
        missing = set(ref) ^ set(arrays)
        raise DataError(f"checkpoint paths do not match the model: {sorted(missing)[:5]} ...")
    for key, tensor in ref.items():
        arr = arrays[key]
        if tuple(tensor.shape) != arr.shape:
            raise DataError(
                f"checkpoint shape {arr.shape} does not match model {tuple(tensor.shape)} "
                f"at {key!r}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"checkpoint holds non-finite values at {key!r}")
        out[key] = torch.from_numpy(np.array(arr)).to(tensor.dtype)
    return out
