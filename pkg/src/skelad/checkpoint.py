"""Versioned flat checkpoint container.

Byte layout (all integers little-endian):

    offset 0   8 bytes   magic ``b"SKELCKPT"``
    offset 8   4 bytes   format version, uint32 (currently 1)
    then, repeated until end of file, one entry per named array:
        uint64            name length in bytes
        <len> bytes       UTF-8 name
        uint64            rank
        rank * uint64     shape dims
        prod(dims) * f32  values, IEEE-754 single precision

Values are always stored in 32-bit precision regardless of the in-memory
compute dtype. Scalar metadata travels as one-element arrays under a
``meta/`` name prefix.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SKELCKPT"
VERSION = 1


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<Q", raw.ndim))
            for dim in raw.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(raw.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")

    arrays: dict[str, np.ndarray] = {}
    pos = len(MAGIC) + 4
    end = len(blob)
    while pos < end:
        if pos + 8 > end:
            raise DataError(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if pos + name_len > end:
            raise DataError(f"{path}: truncated entry name")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 8 > end:
            raise DataError(f"{path}: truncated rank for '{name}'")
        (rank,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if pos + 8 * rank > end:
            raise DataError(f"{path}: truncated shape for '{name}'")
        shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        nbytes = 4 * count
        if pos + nbytes > end:
            raise DataError(f"{path}: truncated values for '{name}'")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += nbytes
        if name in arrays:
            raise DataError(f"{path}: duplicate entry '{name}'")
        arrays[name] = values.copy()
    return arrays
