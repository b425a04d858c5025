"""Binary snapshots and plot-ready CSV with round-trip exactness.

Snapshots carry a 16-byte magic/version header followed by the array
shape and little-endian float64 payload. CSV floats are written with 17
significant digits so parsing them back reproduces the doubles exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidGridError

_SNAP_MAGIC = b"SFSNAP01"
_SNAP_VERSION = 1


def dump_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<8sII", _SNAP_MAGIC, _SNAP_VERSION, a.ndim)
    dims = struct.pack(f"<{a.ndim}q", *a.shape)
    return head + dims + a.tobytes()


def load_array(blob: bytes) -> np.ndarray:
    head = struct.calcsize("<8sII")
    magic, version, ndim = struct.unpack("<8sII", blob[:head])
    if magic != _SNAP_MAGIC or version != _SNAP_VERSION:
        raise InvalidGridError("not a stochflow snapshot")
    dims = struct.unpack(f"<{ndim}q", blob[head:head + 8 * ndim])
    count = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(blob, dtype="<f8", offset=head + 8 * ndim, count=count)
    return data.reshape(dims).copy()


def save_snapshot(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dump_array(arr))


def load_snapshot(path: str | Path) -> np.ndarray:
    return load_array(Path(path).read_bytes())


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence[float]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_series_csv(path: str | Path, times: np.ndarray,
                     values: np.ndarray, prefix: str = "mode") -> None:
    """Time series CSV: first column t, then one column per component."""
    values = np.atleast_2d(np.asarray(values))
    if values.shape[0] != len(times):
        values = values.T
    header = ["t"] + [f"{prefix}{i + 1}" for i in range(values.shape[1])]
    write_csv(path, header, np.column_stack([times, values]))
