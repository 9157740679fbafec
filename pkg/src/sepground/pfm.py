"""Grayscale portable float map (PFM) read/write.

Used to persist alpha maps and heatmaps for debugging and for the
ensemble pipeline. Payload is float32, little-endian (negative scale),
rows stored top-to-bottom in row-major order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError, ShapeError


def write_pfm(path: str | os.PathLike, values: np.ndarray) -> None:
    if values.ndim != 2:
        raise ShapeError(f"PFM payload must be a 2-D grid, got shape {values.shape}")
    h, w = values.shape
    data = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise DataError(f"{path}: not a grayscale PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise DataError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(4 * w * h)
        if len(payload) != 4 * w * h:
            raise DataError(f"{path}: truncated PFM payload")
    return np.frombuffer(payload, dtype=dtype).reshape(h, w).astype(np.float32)
