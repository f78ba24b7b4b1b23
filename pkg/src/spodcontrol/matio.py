"""On-disk formats: binary matrices and CSV tables.

Binary layout: 16-byte header (magic ``b"TOPT"``, u32 rows, u32 cols,
u32 reserved = 0), then ``rows*cols`` little-endian float64 in row-major
order. One-dimensional arrays are stored as a single row.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TOPT"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def write_matrix(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ValueError("only 1D or 2D arrays can be stored")
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols, 0))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, rows, cols, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise FormatError(f"{path}: expected {rows}x{cols} doubles, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_spectrum(path, singular_values) -> None:
    write_csv(path, ["index", "sigma"], ((i + 1, s) for i, s in enumerate(singular_values)))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
