"""
Trace matrix files: a fixed little endian header followed by the matrix
values in column major order, so every trace (column) is contiguous.

    magic               8 bytes  b"RFNTRCE1"
    dtype               4 bytes  b"f32\\0" or b"f64\\0"
    rows                u32
    cols                u32
    sample_interval_us  u32
    payload             rows * cols values
"""

import logging
import os
import os.path as p
import struct
import tempfile
from threading import Lock
from typing import Tuple

import numpy as np

from rfncsc.common import DEFAULT_SAMPLE_INTERVAL, TraceFileError

_logger = logging.getLogger(__name__)

MAGIC = b"RFNTRCE1"
_HEADER = struct.Struct("<8s4sIII")
_DTYPES = {
    b"f32\0": np.dtype("<f4"),
    b"f64\0": np.dtype("<f8"),
}
_TAGS = {"f32": b"f32\0", "f64": b"f64\0"}
_U32_MAX = 2 ** 32 - 1

# Writers go through a temporary file renamed in place, the lock keeps two
# threads of this process from racing on the same destination
_WRITE_LOCK = Lock()


def _currentUmask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def writeTraceMatrix(
    path: str,
    matrix,
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL,
    dtype: str = "f32",
) -> None:
    """
    Writes a 2D matrix. f32 files down convert double precision data, which
    is lossy; use f64 for bit exact round trips of solver outputs.
    """
    if dtype not in _TAGS:
        raise TraceFileError(f"Unsupported dtype '{dtype}', use one of {sorted(_TAGS)}")
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[:, np.newaxis]
    if matrix.ndim != 2:
        raise TraceFileError(f"Only 2D matrices can be written, got shape {matrix.shape}")
    rows, cols = matrix.shape
    interval_us = int(round(sample_interval * 1e6))
    if max(rows, cols, interval_us) > _U32_MAX or interval_us < 0:
        raise TraceFileError(f"Header fields do not fit in 32 bits: {matrix.shape}, {interval_us}")

    tag = _TAGS[dtype]
    header = _HEADER.pack(MAGIC, tag, rows, cols, interval_us)
    payload = np.asarray(matrix, dtype=_DTYPES[tag]).tobytes(order="F")

    directory = p.dirname(p.abspath(path))
    with _WRITE_LOCK:
        tmp_path = None
        try:
            fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".rfntrce_")
            with os.fdopen(fd, "wb") as fp:
                fp.write(header)
                fp.write(payload)
            # mkstemp creates 0600 files, give the result the usual mode
            os.chmod(tmp_path, 0o666 & ~_currentUmask())
            os.replace(tmp_path, path)
        except OSError as exc:
            if tmp_path is not None and p.exists(tmp_path):
                os.unlink(tmp_path)
            raise TraceFileError(f"Failed to write {path}: {exc}") from exc

    _logger.debug("Wrote %dx%d %s matrix to %s", rows, cols, dtype, path)


def readTraceMatrix(path: str) -> Tuple[np.ndarray, float]:
    "Returns the matrix (as float64) and its sample interval in seconds"
    try:
        with open(path, "rb") as fp:
            data = fp.read()
    except OSError as exc:
        raise TraceFileError(f"Failed to read {path}: {exc}") from exc

    if len(data) < _HEADER.size:
        raise TraceFileError(f"{path} is too short to hold a header")
    magic, tag, rows, cols, interval_us = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TraceFileError(f"{path} is not a trace matrix file (magic {magic!r})")
    if tag not in _DTYPES:
        raise TraceFileError(f"{path} has unknown dtype tag {tag!r}")

    dtype = _DTYPES[tag]
    expected = rows * cols * dtype.itemsize
    payload = data[_HEADER.size :]
    if len(payload) != expected:
        raise TraceFileError(
            f"{path} payload has {len(payload)} bytes, header implies {expected}"
        )

    matrix = np.frombuffer(payload, dtype=dtype).reshape((rows, cols), order="F")
    _logger.debug("Read %dx%d matrix from %s", rows, cols, path)
    return matrix.astype(float), interval_us * 1e-6
