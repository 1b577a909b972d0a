"""CEMB writer: 16-byte header + little-endian float32 payload, row-major.

Deliberately implemented here rather than imported from the training
core, so the cross-package contract tests compare two independent
implementations of the format.
"""

import struct

import numpy as np

from . import ExporterError

MAGIC = b"CEMB"
VERSION = 1


def write_embeddings(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ExporterError(f"embeddings must be 2-D, got shape {matrix.shape}")
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise ExporterError("embeddings contain non-finite values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
