"""Versioned binary snapshots of named float32 tensors.

Layout (all little-endian): magic "DENC", version u32, tensor count u32;
then per tensor: name length u16, UTF-8 name, dtype code u8 (0 = real32),
rank u8, one u32 per dim, raw values. Tensors are written in sorted name
order so identical contents produce identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError

MAGIC = b"DENC"
VERSION = 1
DTYPE_REAL32 = 0


def save_checkpoint(path, tensors, version=VERSION):
    """Write a {name: float32 ndarray} mapping; round-trips bit-identically."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", version, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            if arr.dtype != np.float32:
                raise ContractError(f"checkpoint tensor {name!r} must be real32, got {arr.dtype}")
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ContractError(f"tensor name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise ContractError(f"tensor rank too high: {name!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", DTYPE_REAL32, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    """Returns (version, {name: float32 ndarray})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContractError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    off = 12
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        dtype_code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if dtype_code != DTYPE_REAL32:
            raise ContractError(f"{path}: unknown dtype code {dtype_code} for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n_vals = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=off).reshape(dims)
        off += 4 * n_vals
        tensors[name] = arr.copy()
    return version, tensors
