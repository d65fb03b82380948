"""PCB1 point-cloud file format.

Little-endian binary: 8-byte magic "PCB1\\0\\0\\0\\0", u64 point count N, then
N records of nine float32 values in order (r, g, b, x, y, z, nx, ny, nz).
Readers reject a wrong magic or a truncated payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataIOError
from .geometry import PointCloud

MAGIC = b"PCB1\x00\x00\x00\x00"
_HEADER = struct.Struct("<8sQ")


def write_pcb(cloud: PointCloud, path) -> None:
    path = Path(path)
    payload = cloud.data.astype("<f4").tobytes()
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, cloud.n))
        fh.write(payload)


def read_pcb(path) -> PointCloud:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read point cloud {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataIOError(f"{path}: truncated header")
    magic, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataIOError(f"{path}: bad magic {magic!r}")
    if n == 0:
        raise DataIOError(f"{path}: empty point cloud")
    expected = _HEADER.size + n * 9 * 4
    if len(raw) != expected:
        raise DataIOError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, 9)
    return PointCloud(data.astype(np.float64))
