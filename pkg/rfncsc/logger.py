import logging
from threading import Lock

TRACE = 5

_installed: list = []


def setupLogging(stream, level, color=True):
    """
    Setup logging according to the command line parameters. ``stream`` is
    either a file like object or the path of a log file to append to.
    """
    if isinstance(stream, str):

        class Stream(object):
            """
            Log file wrapper that lets RainbowLoggingHandler decide whether to
            write color codes
            """

            _lock = Lock()
            _color = color

            def __init__(self, *args, **kwargs):
                self._fd = open(*args, **kwargs)

            def isatty(self):
                return self._color

            def write(self, text):
                with self._lock:
                    self._fd.write(text.encode("utf-8", errors="replace"))

            def flush(self):
                self._fd.flush()

        _stream = Stream(stream, "ab", buffering=0)
    else:
        _stream = stream

    handler = None
    if color:
        handler = _rainbowHandler(_stream)
    if handler is None:
        handler = logging.StreamHandler(_stream)
        handler.formatter = logging.Formatter(
            "%(levelname)-7s | %(asctime)s | "
            + "%(name)s @ %(funcName)s():%(lineno)d "
            + "|\t%(message)s",
            datefmt="%H:%M:%S",
        )

    # Calling again (e.g. from tests) replaces the previous handler
    while _installed:
        logging.root.removeHandler(_installed.pop())
    _installed.append(handler)
    logging.root.addHandler(handler)
    logging.root.setLevel(level)
    return handler


def _rainbowHandler(stream):
    try:
        from rainbow_logging_handler import RainbowLoggingHandler  # type: ignore
    except ImportError:  # pragma: no cover
        return None

    handler = RainbowLoggingHandler(
        stream,
        color_asctime=("white", "black"),
        color_name=("white", "black"),
        color_funcName=("green", "black"),
        color_lineno=("white", "black"),
        color_pathname=("black", "red"),
        color_module=("yellow", None),
        color_message_debug=("cyan", None),
        color_message_info=(None, None),
        color_message_warning=("yellow", None),
        color_message_error=("red", None),
        color_message_critical=("bold white", "red"),
    )
    # Solver iteration telemetry uses the same color as debug
    message_colors = getattr(handler, "_column_color", {}).get("%(message)s")
    if isinstance(message_colors, dict) and logging.DEBUG in message_colors:
        message_colors[TRACE] = message_colors[logging.DEBUG]
    return handler


def levelFromVerbosity(count: int) -> int:
    """
    Maps the number of -v flags to a logging level: none is WARNING, then
    INFO, DEBUG and finally TRACE
    """
    if count <= 0:
        return logging.WARNING
    if count == 1:
        return logging.INFO
    if count == 2:
        return logging.DEBUG
    return TRACE


def addLoggingLevel(levelName, levelNum, methodName=None):
    """
    Adds a new logging level to the `logging` module and to the currently
    configured logger class.

    `levelName` becomes an attribute of the `logging` module with the value
    `levelNum` and `methodName` (defaults to `levelName.lower()`) becomes a
    convenience method on both `logging` and the logger class. Registering the
    same name twice with the same number is a no-op, with a different number it
    raises `AttributeError`.

    >>> addLoggingLevel('TRACE', 5)
    >>> logging.getLogger(__name__).trace('per iteration details')
    """
    if not methodName:
        methodName = levelName.lower()

    if getattr(logging, levelName, None) == levelNum and hasattr(
        logging.getLoggerClass(), methodName
    ):
        return

    if hasattr(logging, levelName):
        raise AttributeError("{} already defined in logging module".format(levelName))
    if hasattr(logging, methodName):
        raise AttributeError("{} already defined in logging module".format(methodName))
    if hasattr(logging.getLoggerClass(), methodName):
        raise AttributeError("{} already defined in logger class".format(methodName))

    def logForLevel(self, message, *args, **kwargs):
        if self.isEnabledFor(levelNum):
            self._log(levelNum, message, args, **kwargs)

    def logToRoot(message, *args, **kwargs):
        logging.log(levelNum, message, *args, **kwargs)

    logging.addLevelName(levelNum, levelName)
    setattr(logging, levelName, levelNum)
    setattr(logging.getLoggerClass(), methodName, logForLevel)
    setattr(logging, methodName, logToRoot)


addLoggingLevel("TRACE", TRACE)
