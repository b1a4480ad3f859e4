# pylint: disable=missing-docstring

import logging
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

from tabulate import tabulate as _tabulate  # type: ignore

_logger = logging.getLogger(__name__)

# Sample interval used throughout the synthetic experiments (F_s = 250 Hz)
DEFAULT_SAMPLE_INTERVAL = 0.004


class RfnCscError(Exception):
    "Base class for all rfncsc errors"


class InvalidParameterError(RfnCscError, ValueError):
    "A parameter is outside of its valid domain"


class KernelInvariantError(RfnCscError):
    "A normalization kernel violates the kernel definition"


class KernelShapeError(RfnCscError):
    "A normalization kernel has the wrong shape for the requested check"


class DegenerateAtomError(RfnCscError):
    "A dictionary atom has zero norm"


class BoundaryError(RfnCscError):
    "An index falls outside of the data"


class UndefinedScoreError(RfnCscError):
    "A score is undefined because one of its inputs is all zeros"


class TraceFileError(RfnCscError):
    "A trace-matrix file is malformed"


class OutputError(RfnCscError):
    "An output file cannot be written"


class ConfigError(RfnCscError):
    """
    Configuration could not be parsed or validated. ``key`` is the dotted path
    of the offending entry, ``line`` and ``column`` are set for syntax errors.
    """

    def __init__(
        self,
        message: str,
        key: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.key = key
        self.line = line
        self.column = column
        location = []
        if key is not None:
            location.append(f"key '{key}'")
        if line is not None:
            location.append(f"line {line}, column {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class DictionaryKind(Enum):
    """
    Dictionary flavours. Time invariant dictionaries are stored implicitly as
    filters, time variant ones are materialized as dense matrices.
    """

    TIME_INVARIANT = "time-invariant"
    TIME_VARIANT_Q = "time-variant-q"


class KernelShape(Enum):
    "Receptive field normalization window shapes"

    RECTANGULAR = "rectangular"
    GAUSSIAN = "gaussian"
    CUSTOM = "custom"


class AmplitudeMode(Enum):
    """
    How RFN-ITA turns a detected support into amplitudes. Values are the names
    used in config files and on the command line.
    """

    LEAST_SQUARES = "least-squares"
    PROJECTION_APPROX = "projection"
    RESIDUAL_APPROX = "residual"
    SUPPORT_ONLY = "support-only"


class SolverName(Enum):
    RFN_ITA = "rfn-ita"
    SUPPORT_DETECT = "support-detect"
    ISTA = "ista"
    UNROLLED = "unrolled"


class Theorem(Enum):
    T1 = 1
    T2 = 2
    T3 = 3


def parseEnum(enum_type, value: Any):
    "Converts a config/command line string into an enum member"
    if isinstance(value, enum_type):
        return value
    for member in enum_type:
        if value in (member.value, member.name, member.name.lower()):
            return member
    choices = ", ".join(str(member.value) for member in enum_type)
    raise InvalidParameterError(
        f"Invalid {enum_type.__name__} '{value}', valid values are: {choices}"
    )


def formatTable(rows: Iterable[Sequence[Any]], headers: Sequence[str]) -> str:
    "Formats rows as a plain text table, None values are shown as n/a"
    cleaned = [["n/a" if cell is None else cell for cell in row] for row in rows]
    return _tabulate(cleaned, headers=headers, floatfmt=".4g")


__all__ = [
    "DEFAULT_SAMPLE_INTERVAL",
    "RfnCscError",
    "InvalidParameterError",
    "KernelInvariantError",
    "KernelShapeError",
    "DegenerateAtomError",
    "BoundaryError",
    "UndefinedScoreError",
    "TraceFileError",
    "ConfigError",
    "DictionaryKind",
    "KernelShape",
    "AmplitudeMode",
    "SolverName",
    "Theorem",
    "parseEnum",
    "formatTable",
]
