# pylint: disable=missing-docstring

import os
import stat
import struct

import numpy as np
import pytest

from rfncsc.common import TraceFileError
from rfncsc.trace_file import MAGIC, readTraceMatrix, writeTraceMatrix


def test_f64_is_bit_exact(tmp_path):
    path = str(tmp_path / "matrix.rtm")
    matrix = np.random.default_rng(0).standard_normal((7, 3))
    writeTraceMatrix(path, matrix, 0.002, "f64")
    result, sample_interval = readTraceMatrix(path)
    np.testing.assert_array_equal(result, matrix)
    assert sample_interval == pytest.approx(0.002)


def test_f32_rounds_to_single_precision(tmp_path):
    path = str(tmp_path / "matrix.rtm")
    matrix = np.array([[1 / 3, 2.0], [-0.1, 1e-8]])
    writeTraceMatrix(path, matrix)
    result, sample_interval = readTraceMatrix(path)
    assert result.dtype == np.float64
    np.testing.assert_array_equal(result, matrix.astype(np.float32))
    assert sample_interval == pytest.approx(0.004)


def test_layout_is_column_major(tmp_path):
    path = tmp_path / "matrix.rtm"
    matrix = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    writeTraceMatrix(str(path), matrix, dtype="f64")
    data = path.read_bytes()
    magic, tag, rows, cols, interval_us = struct.unpack_from("<8s4sIII", data)
    assert (magic, tag, rows, cols, interval_us) == (MAGIC, b"f64\0", 2, 3, 4000)
    np.testing.assert_array_equal(
        np.frombuffer(data[24:], dtype="<f8"), [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]
    )


def test_vectors_are_written_as_one_column(tmp_path):
    path = str(tmp_path / "vector.rtm")
    writeTraceMatrix(path, np.arange(5.0))
    result, _ = readTraceMatrix(path)
    assert result.shape == (5, 1)


def test_bad_magic(tmp_path):
    path = tmp_path / "bogus.rtm"
    path.write_bytes(b"NOTATRCE" + bytes(16))
    with pytest.raises(TraceFileError, match="not a trace matrix"):
        readTraceMatrix(str(path))


def test_truncated_payload(tmp_path):
    path = tmp_path / "matrix.rtm"
    writeTraceMatrix(str(path), np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TraceFileError, match="payload"):
        readTraceMatrix(str(path))


def test_short_file_and_missing_file(tmp_path):
    path = tmp_path / "short.rtm"
    path.write_bytes(MAGIC)
    with pytest.raises(TraceFileError):
        readTraceMatrix(str(path))
    with pytest.raises(TraceFileError):
        readTraceMatrix(str(tmp_path / "missing.rtm"))


def test_write_errors(tmp_path):
    with pytest.raises(TraceFileError):
        writeTraceMatrix(str(tmp_path / "a.rtm"), np.ones(3), dtype="f16")
    with pytest.raises(TraceFileError):
        writeTraceMatrix(str(tmp_path / "a.rtm"), np.ones((2, 2, 2)))
    with pytest.raises(TraceFileError):
        writeTraceMatrix(str(tmp_path / "missing" / "a.rtm"), np.ones(3))


@pytest.mark.skipif(os.name != "posix", reason="POSIX permission bits")
@pytest.mark.parametrize("umask, mode", [(0o022, 0o644), (0o077, 0o600), (0o002, 0o664)])
def test_written_files_follow_the_umask(tmp_path, umask, mode):
    path = str(tmp_path / "matrix.rtm")
    previous = os.umask(umask)
    try:
        writeTraceMatrix(path, np.ones((2, 2)))
    finally:
        os.umask(previous)
    assert stat.S_IMODE(os.stat(path).st_mode) == mode
    assert [name for name in os.listdir(tmp_path) if name.startswith(".rfntrce_")] == []
