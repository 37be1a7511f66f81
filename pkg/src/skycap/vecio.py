"""Reader/writer for the EVEC binary embedding file format.

Layout (all integers little-endian):

    magic bytes b"EVEC" | version u32 (=1) | dtype code u8 (1 = float32)
    | dim u32 | count u64 | count * dim float32 values, row-major

Row order in the file defines the ``embedding_row`` indices used by
metadata records.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MalformedHeaderError

MAGIC = b"EVEC"
VERSION = 1
DTYPE_FLOAT32 = 1

_HEADER = struct.Struct("<4sIBIQ")


def write_vectors(path: str | Path, vectors: np.ndarray) -> None:
    """Write a (count, dim) float array to ``path`` in EVEC format."""
    arr = np.ascontiguousarray(vectors, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, dim, count))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_vectors(path: str | Path) -> np.ndarray:
    """Read an EVEC file and return a C-contiguous (count, dim) float32 array."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise MalformedHeaderError(f"{path}: truncated header")
        magic, version, dtype_code, dim, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise MalformedHeaderError(f"{path}: unsupported version {version}")
        if dtype_code != DTYPE_FLOAT32:
            raise MalformedHeaderError(f"{path}: unsupported dtype code {dtype_code}")
        if dim == 0:
            raise MalformedHeaderError(f"{path}: zero dimension")
        payload = fh.read()
    expected = count * dim * 4
    if len(payload) != expected:
        raise MalformedHeaderError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return np.ascontiguousarray(data, dtype=np.float32)
