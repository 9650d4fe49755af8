"""Raw series files: consecutive little-endian float64 values, no header."""
from __future__ import annotations

import os

import numpy as np

from .errors import InvalidSeries

DTYPE = np.dtype("<f8")


def write_series(path, values) -> int:
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    return arr.size


def read_series(path, mmap: bool = True) -> np.ndarray:
    size = os.path.getsize(path)
    if size == 0 or size % DTYPE.itemsize:
        raise InvalidSeries(f"{path}: size {size} is not a positive multiple of 8 bytes")
    if mmap:
        return np.memmap(path, dtype=DTYPE, mode="r")
    return np.fromfile(path, dtype=DTYPE)
