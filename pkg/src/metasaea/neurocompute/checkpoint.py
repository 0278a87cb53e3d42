"""Binary checkpoint format: versioned header, JSON metadata, raw float64 params.

Layout (little-endian):
    magic  b"NCKP"
    u32    format version
    u32    metadata length, followed by UTF-8 JSON bytes
    u32    parameter count
    per parameter:
        u16  name length, UTF-8 name
        u8   ndim, then u32 per dimension
        raw  float64 values, row-major

Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NCKP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict | None = None):
    path = Path(path)
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)  # 0-dim arrays keep their shape
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        metadata = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_values = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n_values), dtype="<f8").astype(np.float64)
            arrays[name] = data.reshape(shape)
    return arrays, metadata
