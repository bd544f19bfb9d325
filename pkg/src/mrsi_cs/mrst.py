"""MRST binary tensor files.

Layout: magic ``MRST``, u32 version (=1), u32 dtype code (1 = real64,
2 = complex128 interleaved), u32 ndim, u64 dims[ndim], then the payload
little-endian in row-major order.  Used for distributions, base spectra
and signal vectors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

MAGIC = b"MRST"
VERSION = 1
_DTYPE_REAL64 = 1
_DTYPE_COMPLEX128 = 2

__all__ = ["write_tensor", "read_tensor"]


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a real64 or complex128 tensor; other dtypes are upcast."""
    a = np.asarray(array)
    if np.iscomplexobj(a):
        a = a.astype("<c16", copy=False)
        code = _DTYPE_COMPLEX128
    else:
        a = a.astype("<f8", copy=False)
        code = _DTYPE_REAL64
    a = np.ascontiguousarray(a)
    header = MAGIC + struct.pack("<III", VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ShapeError(f"{path}: not an MRST file (bad magic {raw[:4]!r})")
    version, code, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise ShapeError(f"{path}: unsupported MRST version {version}")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 16)
    offset = 16 + 8 * ndim
    if code == _DTYPE_REAL64:
        dtype = np.dtype("<f8")
    elif code == _DTYPE_COMPLEX128:
        dtype = np.dtype("<c16")
    else:
        raise ShapeError(f"{path}: unknown dtype code {code}")
    count = int(np.prod(dims)) if dims else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ShapeError(f"{path}: payload is {len(raw) - offset} bytes, expected {expected - offset}")
    a = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return a.reshape(dims).astype(dtype.newbyteorder("="))
