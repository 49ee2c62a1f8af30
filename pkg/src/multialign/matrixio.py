"""Binary matrix files: a 16-byte header (two little-endian int64 dims) followed
by row-major entries in the stated dtype."""

import struct

import numpy as np

from .errors import FormatError

_HEADER = struct.Struct("<qq")


def write_matrix(path, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError("only 2-D matrices are supported")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_matrix(path, dtype):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        rows, cols = _HEADER.unpack(head)
        if rows < 0 or cols < 0:
            raise FormatError(f"{path}: negative dimensions in header")
        data = fh.read()
    expected = rows * cols * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} data bytes for {rows}x{cols}, got {len(data)}"
        )
    return np.frombuffer(data, dtype=dtype).reshape(rows, cols).copy()
