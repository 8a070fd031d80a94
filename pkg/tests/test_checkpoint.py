"""Byte-level checks of the flat checkpoint container."""
import struct

import numpy as np
import pytest

from skelad.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from skelad.errors import DataError


def test_roundtrip_preserves_names_shapes_values(tmp_path):
    arrays = {
        "graph/V": np.arange(12, dtype=np.float64).reshape(3, 4),
        "scalar": np.array([3.5]),
        "deep/name/with/slashes": np.ones((2, 2, 2), dtype=np.float32),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(arrays, path)
    back = load_checkpoint(path)
    assert list(back) == list(arrays)
    for name, arr in arrays.items():
        assert back[name].shape == arr.shape
        assert back[name].dtype == np.float32
        assert np.allclose(back[name], arr.astype(np.float32))


def test_header_bytes(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint({"w": np.array([1.0, 2.0])}, path)
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    assert struct.unpack_from("<I", blob, 8)[0] == VERSION
    # entry: name length (8 bytes) + name + rank + dims + payload
    (name_len,) = struct.unpack_from("<Q", blob, 12)
    assert name_len == 1
    assert blob[20:21] == b"w"
    (rank,) = struct.unpack_from("<Q", blob, 21)
    assert rank == 1
    (dim,) = struct.unpack_from("<Q", blob, 29)
    assert dim == 2
    vals = np.frombuffer(blob, dtype="<f4", count=2, offset=37)
    assert np.array_equal(vals, [1.0, 2.0])
    assert len(blob) == 37 + 8


def test_values_stored_little_endian_f32(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint({"x": np.array([1.5])}, path)
    assert path.read_bytes()[-4:] == struct.pack("<f", 1.5)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v9.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 9))
    with pytest.raises(DataError, match="version"):
        load_checkpoint(path)


def test_truncation_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint({"w": np.ones(8)}, path)
    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(clipped)


def test_deterministic_bytes(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float64), "b": np.zeros((2, 3))}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(arrays, p1)
    save_checkpoint(arrays, p2)
    assert p1.read_bytes() == p2.read_bytes()
