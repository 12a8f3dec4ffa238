"""File formats: trajectory CSV, JSON reports and raw state snapshots.

Every writer goes through a temporary file in the target directory followed
by an atomic rename, so readers never see a partial file.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .meanfield import TimeSeries


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def trajectory_csv(series: Mapping[str, TimeSeries]) -> str:
    """CSV text with header ``t,<name>,...``; all series must share one time grid."""
    if not series:
        raise ValueError("no series to write")
    items = list(series.items())
    first = items[0][1]
    for name, s in items[1:]:
        if len(s) != len(first) or s.dt != first.dt or s.t0 != first.t0:
            raise ValueError(f"series {name!r} is not on the same time grid as {items[0][0]!r}")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [name for name, _ in items])
    cols = np.column_stack([first.times] + [s.values for _, s in items])
    for row in cols:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_trajectory_csv(path, series: Mapping[str, TimeSeries]) -> Path:
    return atomic_write_text(path, trajectory_csv(series))


def read_trajectory_csv(path) -> dict[str, TimeSeries]:
    """Inverse of :func:`write_trajectory_csv`. Assumes a uniform time grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        data = np.array([[float(v) for v in row] for row in reader])
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows")
    t = data[:, 0]
    dt = float(t[1] - t[0])
    return {name: TimeSeries(dt, data[:, k + 1], name, float(t[0])) for k, name in enumerate(header[1:])}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, NaN kept as ``NaN``."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_snapshot(path, state: np.ndarray) -> Path:
    """Complex state as little-endian float64 pairs ``(re, im)``."""
    z = np.ascontiguousarray(np.asarray(state, dtype=np.complex128).ravel())
    inter = np.empty(2 * z.size, dtype="<f8")
    inter[0::2] = z.real
    inter[1::2] = z.imag
    return atomic_write_bytes(path, inter.tobytes())


def read_snapshot(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f8")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of float64 values")
    return raw[0::2] + 1j * raw[1::2]
