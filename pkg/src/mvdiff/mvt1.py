"""MVT1 tensor container: a minimal binary format for n-d float arrays.

Layout: magic bytes ``MVT1``, u8 dtype code (0 = f32, 1 = f64), u8 ndims,
ndims little-endian u32 dims, then the raw little-endian row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVT1"
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_KIND_TO_CODE = {"f4": 0, "f8": 1}


def write(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _KIND_TO_CODE:
        raise ValueError(f"MVT1 stores f32/f64 only, got dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError(f"MVT1 supports up to 255 dims, got {arr.ndim}")
    code = _KIND_TO_CODE[key]
    header = struct.pack("<4sBB", MAGIC, code, arr.ndim)
    dims = np.asarray(arr.shape, dtype="<u4").tobytes()
    payload = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def read(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an MVT1 file")
    code, ndims = struct.unpack_from("<BB", raw, 4)
    if code not in _CODE_TO_DTYPE:
        raise ValueError(f"{path}: unknown dtype code {code}")
    dims_end = 6 + 4 * ndims
    dims = np.frombuffer(raw, dtype="<u4", count=ndims, offset=6)
    shape = tuple(int(d) for d in dims)
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(shape)) * dtype.itemsize if ndims else dtype.itemsize
    payload = raw[dims_end:]
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
