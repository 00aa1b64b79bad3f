"""Binary formats: the Riesz kernel cache and the field dump.

Kernel cache (little-endian)::

    b"RKRN" | u32 version | u32 N | f64 lam | 32-byte key | u32 n | n*n f64, row-major

Field dump (little-endian)::

    b"BRFD" | u32 version | 32-byte grid hash | u64 count | count f64
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KERNEL_MAGIC = b"RKRN"
KERNEL_VERSION = 1
FIELD_MAGIC = b"BRFD"
FIELD_VERSION = 1

_KHEAD = struct.Struct("<4sIId32sI")
_FHEAD = struct.Struct("<4sI32sQ")


class FormatError(ValueError):
    """Raised for malformed or mismatching binary files."""


@dataclass(frozen=True)
class KernelHeader:
    version: int
    N: int
    lam: float
    key: bytes
    n: int


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_kernel(path, N: int, lam: float, key: bytes, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    n = m.shape[0]
    if m.shape != (n, n) or len(key) != 32:
        raise FormatError("kernel matrix must be square and the key 32 bytes")
    head = _KHEAD.pack(KERNEL_MAGIC, KERNEL_VERSION, int(N), float(lam), key, n)
    _atomic_write(Path(path), head + m.tobytes())


def read_kernel(path) -> tuple[KernelHeader, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _KHEAD.size:
        raise FormatError("truncated kernel file")
    magic, version, N, lam, key, n = _KHEAD.unpack_from(data)
    if magic != KERNEL_MAGIC:
        raise FormatError("not a kernel cache file")
    if version != KERNEL_VERSION:
        raise FormatError(f"unsupported kernel cache version {version}")
    if len(data) != _KHEAD.size + 8 * n * n:
        raise FormatError("kernel payload has the wrong length")
    m = np.frombuffer(data, dtype="<f8", offset=_KHEAD.size).reshape(n, n).astype(float)
    return KernelHeader(version, N, lam, key, n), m


def write_field(path, grid_hash: bytes, values) -> None:
    v = np.ascontiguousarray(np.asarray(values, dtype=float).ravel(), dtype="<f8")
    if len(grid_hash) != 32:
        raise FormatError("grid hash must be 32 bytes")
    _atomic_write(Path(path), _FHEAD.pack(FIELD_MAGIC, FIELD_VERSION, grid_hash, v.size) + v.tobytes())


def read_field(path) -> tuple[bytes, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _FHEAD.size:
        raise FormatError("truncated field dump")
    magic, version, grid_hash, count = _FHEAD.unpack_from(data)
    if magic != FIELD_MAGIC or version != FIELD_VERSION:
        raise FormatError("not a field dump of a supported version")
    if len(data) != _FHEAD.size + 8 * count:
        raise FormatError("field payload has the wrong length")
    return grid_hash, np.frombuffer(data, dtype="<f8", offset=_FHEAD.size).astype(float)
