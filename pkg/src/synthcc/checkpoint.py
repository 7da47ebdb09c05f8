"""Binary checkpoint format for parameter stores.

Layout: magic bytes CCF1, an 8-byte little-endian length, a UTF-8 JSON
manifest {version, tensors: [{name, shape, dtype, offset, nbytes}]}, then the
concatenated tensor payloads as little-endian IEEE-754 floats (32-bit for
standard training checkpoints; 64-bit tensors keep their width so a round
trip is always bit-identical).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParamStore

MAGIC = b"CCF1"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def _dtype_tag(dtype: np.dtype) -> str:
    if dtype == np.float32:
        return "<f4"
    if dtype == np.float64:
        return "<f8"
    raise CheckpointError(f"unsupported tensor dtype {dtype}")


def save_checkpoint(params: ParamStore, path: str | Path) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in params.items():
        tag = _dtype_tag(tensor.data.dtype)
        raw = np.ascontiguousarray(tensor.data, dtype=_DTYPES[tag]).tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(tensor.data.shape),
                "dtype": tag,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": VERSION, "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str | Path) -> ParamStore:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (manifest_len,) = struct.unpack("<Q", data[4:12])
    manifest_end = 12 + manifest_len
    if len(data) < manifest_end:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[12:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}")
    if manifest.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {manifest.get('version')!r}, expected {VERSION}"
        )
    blob = data[manifest_end:]
    params = ParamStore()
    expected_offset = 0
    for entry in manifest["tensors"]:
        name, shape, tag = entry["name"], tuple(entry["shape"]), entry["dtype"]
        offset, nbytes = entry["offset"], entry["nbytes"]
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r}: unknown dtype {tag!r}")
        if offset != expected_offset:
            raise CheckpointError(f"{path}: tensor {name!r}: overlapping or gapped offsets")
        expected_offset = offset + nbytes
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated blob at tensor {name!r}")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=_DTYPES[tag]).reshape(shape)
        params.add(name, arr.astype(arr.dtype.newbyteorder("=")))
    if expected_offset != len(blob):
        raise CheckpointError(f"{path}: blob length mismatch")
    return params
