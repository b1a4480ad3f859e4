"""
Recovery and reconstruction scores. Images are (rows, channels) arrays whose
columns are traces; correlations are computed on column stacked images.
"""

import logging
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from rfncsc.common import InvalidParameterError, UndefinedScoreError

if TYPE_CHECKING:  # pragma: no cover
    from rfncsc.dictionary import ConvDictionary
    from rfncsc.solvers import ImageRun

_logger = logging.getLogger(__name__)


@dataclass
class ScoreSet:
    "Undefined scores are None"

    rho_x: Optional[float] = None
    rho_x_first: Optional[float] = None
    rho_y: Optional[float] = None
    rho_support: Optional[float] = None
    mse: Optional[float] = None
    m_it: Optional[float] = None

    def toDict(self):
        return asdict(self)


def _checkShapes(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def corrImages(a, b) -> float:
    "Cosine similarity between the column stacked images a and b"
    a, b = _checkShapes(a, b)
    a = a.ravel(order="F")
    b = b.ravel(order="F")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise UndefinedScoreError("Correlation is undefined for all zero images")
    result = float(np.dot(a, b) / (norm_a * norm_b))
    # Rounding can push |result| slightly above 1
    return min(1.0, max(-1.0, result))


def supportCorr(a, b) -> float:
    "corrImages of the indicator images of the nonzero entries"
    a, b = _checkShapes(a, b)
    return corrImages((a != 0).astype(float), (b != 0).astype(float))


def mseCode(x, x_hat) -> float:
    "Mean over channels of the squared l2 error of each column"
    x, x_hat = _checkShapes(x, x_hat)
    if x.ndim == 1:
        return float(np.sum((x - x_hat) ** 2))
    return float(np.mean(np.sum((x - x_hat) ** 2, axis=0)))


def applyImage(dictionary: "ConvDictionary", x) -> np.ndarray:
    "Applies the dictionary to every column of x"
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return dictionary.apply(x)
    return np.column_stack([dictionary.apply(column) for column in x.T])


def reconstructionScore(y, dictionary: "ConvDictionary", x_hat) -> float:
    "Correlation between the data and its reconstruction D x_hat"
    return corrImages(y, applyImage(dictionary, x_hat))


def _optional(func: Callable[..., float], *args) -> Optional[float]:
    try:
        return func(*args)
    except UndefinedScoreError as exc:
        _logger.warning("Score %s is undefined: %s", func.__name__, exc)
        return None


def scoreRun(
    x,
    image_run: "ImageRun",
    y=None,
    dictionary: Optional["ConvDictionary"] = None,
) -> ScoreSet:
    "Assembles the score set of an image solve against the true code x"
    scores = ScoreSet(
        rho_x=_optional(corrImages, x, image_run.x_hat),
        rho_x_first=_optional(corrImages, x, image_run.x_first),
        rho_support=_optional(supportCorr, x, image_run.x_hat),
        mse=mseCode(x, image_run.x_hat),
        m_it=image_run.mean_iterations,
    )
    if y is not None and dictionary is not None:
        scores.rho_y = _optional(reconstructionScore, y, dictionary, image_run.x_hat)
    return scores
