"""LRTF binary arrays with JSON sidecars.

Layout: magic ``b"LRTF"``, u32 version, u8 dtype code (0 float64, 1 complex128),
u8 ndim, u16 padding, ``ndim`` u64 extents, then the row-major payload. All
integers and the payload are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"LRTF"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


class LRTFError(ValueError):
    """Malformed or unsupported LRTF content."""


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def encode(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    code = 1 if np.iscomplexobj(a) else 0
    a = np.ascontiguousarray(a, dtype=_DTYPES[code])
    head = MAGIC + struct.pack("<IBBH", VERSION, code, a.ndim, 0)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise LRTFError("truncated header")
    if buf[:4] != MAGIC:
        raise LRTFError("bad magic")
    version, code, ndim, _ = struct.unpack_from("<IBBH", buf, 4)
    if version != VERSION:
        raise LRTFError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise LRTFError(f"unknown dtype code {code}")
    offset = 12 + 8 * ndim
    if len(buf) < offset:
        raise LRTFError("truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 12)
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != count * dtype.itemsize:
        raise LRTFError("payload size does not match header")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


def write(path: str | Path, array: np.ndarray, meta: dict[str, Any] | None = None) -> Path:
    """Write ``array`` and, when given, its metadata sidecar. Returns the array path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def read_meta(path: str | Path) -> dict[str, Any]:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else {}
