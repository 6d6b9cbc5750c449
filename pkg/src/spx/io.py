"""File formats: the SPMX matrix container, key=value sidecars and manifests.

SPMX layout (all little-endian, no padding)::

    0..3    b"SPMX"
    4..7    format version, u32 (= 1)
    8..15   rows, u64
    16..23  cols, u64
    24..    rows*cols float64 values, row-major
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from spx.errors import InvalidArgument

MAGIC = b"SPMX"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def write_spmx(path: str | os.PathLike, matrix: np.ndarray) -> None:
    """Write a 1-D or 2-D array as SPMX. Vectors are stored as a single column."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgument(f"SPMX holds matrices, got ndim={arr.ndim}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_spmx(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidArgument(f"{path}: truncated SPMX header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidArgument(f"{path}: not an SPMX file")
    if version != VERSION:
        raise InvalidArgument(f"{path}: unsupported SPMX version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise InvalidArgument(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return values.astype(np.float64).reshape(rows, cols)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return "NONE"
    return str(value)


def write_kv(path: str | os.PathLike, items: Mapping[str, object]) -> None:
    """Write ``key=value`` lines in insertion order."""
    lines = []
    for key, value in items.items():
        text = format_value(value)
        if "\n" in text or "=" in key:
            raise InvalidArgument(f"cannot serialize {key!r}")
        lines.append(f"{key}={text}\n")
    Path(path).write_text("".join(lines))


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgument(f"{path}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def meta_path(path: str | os.PathLike) -> Path:
    """Sidecar path sharing the basename: ``scenes.spmx`` -> ``scenes.meta``."""
    return Path(path).with_suffix(".meta")


def manifest_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest")


def sha256_file(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
