"""Snapshot and table formats.

``MBOLBL1`` snapshots are an ASCII header line ``MBOLBL1 d n_cells P Lambda``
followed by the row-major (C order) cell labels as unsigned bytes, 1-based.
Tables are comma-separated with a header row and LF line endings.
"""
from __future__ import annotations

import io as _io
import os

import numpy as np

from .errors import SnapshotFormatError
from .fields import Partition, TorusGrid

__all__ = ["write_snapshot", "read_snapshot", "snapshot_bytes", "parse_snapshot", "write_pgm",
           "write_csv", "format_value"]

MAGIC = "MBOLBL1"


def snapshot_bytes(p: Partition) -> bytes:
    g = p.grid
    header = f"{MAGIC} {g.d} {g.n_cells} {p.P} {g.Lambda!r}\n".encode("ascii")
    return header + np.ascontiguousarray(p.labels, dtype=np.uint8).tobytes(order="C")


def parse_snapshot(data: bytes) -> Partition:
    nl = data.find(b"\n")
    if nl < 0:
        raise SnapshotFormatError("missing header line")
    try:
        parts = data[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise SnapshotFormatError("header is not ASCII") from exc
    if len(parts) != 5 or parts[0] != MAGIC:
        raise SnapshotFormatError(f"bad header {data[:nl]!r}")
    try:
        d, n, P = int(parts[1]), int(parts[2]), int(parts[3])
        Lam = float(parts[4])
        grid = TorusGrid(d, Lam, n)
    except ValueError as exc:
        raise SnapshotFormatError(f"bad header field: {exc}") from exc
    body = data[nl + 1:]
    if len(body) != grid.size:
        raise SnapshotFormatError(f"expected {grid.size} label bytes, found {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).reshape(grid.shape)
    try:
        return Partition(grid, labels, P)
    except (ValueError, IndexError) as exc:
        raise SnapshotFormatError(str(exc)) from exc


def write_snapshot(path, p: Partition):
    with open(path, "wb") as f:
        f.write(snapshot_bytes(p))


def read_snapshot(path) -> Partition:
    with open(path, "rb") as f:
        return parse_snapshot(f.read())


def write_pgm(path, p: Partition):
    """Binary greymap (P5) of a 2-D partition, grey level = label, maxval = P.

    Row ``r`` of the image is ``x_2`` index ``n - 1 - r`` so that ``x_2`` points up.
    """
    if p.grid.d != 2:
        raise ValueError("PGM output needs a 2-D partition")
    n = p.grid.n_cells
    img = np.ascontiguousarray(p.labels.T[::-1])
    with open(path, "wb") as f:
        f.write(f"P5\n{n} {n}\n{max(p.P, 1)}\n".encode("ascii"))
        f.write(img.astype(np.uint8).tobytes())


def format_value(v) -> str:
    """Stable text form: integers as is, floats via ``repr`` (round-trips exactly)."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(buf.getvalue())
