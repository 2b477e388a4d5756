"""Binary tensor serialization: little-endian float32 blob plus JSON manifest.

The manifest lists (name, shape, byte_offset, byte_length) per tensor, in
blob order. Writes are atomic (temp file in the target directory, then
rename), so an interrupted run never leaves a partial artifact.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Sequence

import numpy as np


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def write_blob(
    named_arrays: Sequence[tuple[str, np.ndarray]], bin_path: str, manifest_path: str
) -> None:
    chunks: list[bytes] = []
    manifest: list[dict] = []
    offset = 0
    for name, arr in named_arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "byte_offset": offset,
                "byte_length": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    atomic_write_bytes(bin_path, b"".join(chunks))
    atomic_write_json(manifest_path, manifest)


def read_blob(bin_path: str, manifest_path: str) -> dict[str, np.ndarray]:
    """Load every tensor described by the manifest; rejects truncated blobs."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(bin_path, "rb") as fh:
        payload = fh.read()
    expected = sum(entry["byte_length"] for entry in manifest)
    if len(payload) != expected:
        raise ValueError(
            f"{bin_path}: expected {expected} bytes per manifest, found {len(payload)}"
        )
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        name = entry["name"]
        shape = tuple(entry["shape"])
        start, length = entry["byte_offset"], entry["byte_length"]
        n_values = int(np.prod(shape)) if shape else 1
        if length != 4 * n_values:
            raise ValueError(
                f"{manifest_path}: tensor {name!r} byte_length {length} does not match shape {shape}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=n_values, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out
