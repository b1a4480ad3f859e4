# pylint: disable=missing-docstring

import io
import logging

import pytest

from rfncsc.logger import TRACE, addLoggingLevel, levelFromVerbosity, setupLogging


@pytest.mark.parametrize(
    "count, level",
    [(0, logging.WARNING), (1, logging.INFO), (2, logging.DEBUG), (3, TRACE), (5, TRACE)],
)
def test_level_from_verbosity(count, level):
    assert levelFromVerbosity(count) == level


def test_trace_level_is_registered():
    addLoggingLevel("TRACE", TRACE)
    assert logging.getLevelName(TRACE) == "TRACE"
    assert hasattr(logging.getLogger(__name__), "trace")
    with pytest.raises(AttributeError):
        addLoggingLevel("TRACE", TRACE + 1)


def test_setup_logging_replaces_its_handler():
    previous = logging.root.level
    first = io.StringIO()
    second = io.StringIO()
    try:
        handler = setupLogging(first, logging.INFO, color=False)
        setupLogging(second, logging.INFO, color=False)
        assert handler not in logging.root.handlers
        logging.getLogger("rfncsc.test").info("hello")
        assert "hello" in second.getvalue()
        assert "hello" not in first.getvalue()
    finally:
        for installed in list(logging.root.handlers):
            if getattr(installed, "stream", None) in (first, second):
                logging.root.removeHandler(installed)
        logging.root.setLevel(previous)


def test_setup_logging_appends_to_a_file(tmp_path):
    previous = logging.root.level
    path = tmp_path / "run.log"
    path.write_text("earlier run\n")
    try:
        setupLogging(str(path), logging.INFO, color=False)
        logging.getLogger("rfncsc.test").info("written to file")
        logging.getLogger("rfncsc.test").debug("below the level")
    finally:
        setupLogging(io.StringIO(), previous, color=False)
    text = path.read_text()
    assert text.startswith("earlier run\n")
    assert "written to file" in text
    assert "below the level" not in text
