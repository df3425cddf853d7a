"""Versioned binary container of named float32 arrays.

Layout (all integers little-endian)::

    magic      4 bytes  b"PPCK"
    version    uint32   currently 1
    count      uint32   number of arrays
    count times:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        dims      ndim x uint32
        data      prod(dims) x float32, C order

A network checkpoint holds every entry of ``NetworkParams.parameters()``
and ``NetworkParams.buffers()``, sorted by name.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"PPCK"
VERSION = 1
_F32 = np.dtype("<f4")


def write_arrays(path, arrays: dict):
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        data = np.asarray(arrays[name], dtype=_F32, order="C")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or data.ndim > 0xFF:
            raise CheckpointError(f"array {name!r} cannot be stored (name or rank too large)")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{data.ndim}I", data.ndim, *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte offset {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(take(4 * size), dtype=_F32).reshape(dims).copy()
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes after the last array")
    return arrays


def params_to_arrays(params) -> dict:
    out = {k: t.data for k, t in params.parameters().items()}
    out.update(params.buffers())
    return out


def save_checkpoint(path, params):
    write_arrays(path, params_to_arrays(params))


def load_into(params, arrays: dict):
    """Copy stored arrays into ``params`` in place, checking names and shapes."""
    expected = {k: v.shape for k, v in params_to_arrays(params).items()}
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise CheckpointError(f"checkpoint does not match the network: missing {missing[:5]}, "
                              f"unexpected {extra[:5]}")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape}, network expects {shape}")
    for name, t in params.parameters().items():
        t.data[...] = arrays[name]
    for name, bn in params.norms.items():
        bn.running_mean[...] = arrays[f"{name}.running_mean"]
        bn.running_var[...] = arrays[f"{name}.running_var"]
    return params


def load_checkpoint(path, params):
    return load_into(params, read_arrays(path))
