"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes   b"SIFCKPT\\0"
    version  uint32    currently 1
    count    uint32    number of records
    record   repeated  name_len uint32, name utf-8,
                       ndim uint32, shape uint64 * ndim,
                       payload float64 little-endian, row-major
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from ..exceptions import DataError

MAGIC = b"SIFCKPT\0"
VERSION = 1


def save_checkpoint(path, state):
    """Write a ``name -> array`` mapping (or a ParamStore) to ``path``."""
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, value in state.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    state = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            state[name] = arr.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    return state
