"""
Receptive field normalization building blocks: normalization kernels, local
energy fields, clipping and the elementwise threshold operators.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal  # type: ignore

from rfncsc.common import (
    InvalidParameterError,
    KernelInvariantError,
    KernelShape,
    parseEnum,
)

_logger = logging.getLogger(__name__)

_SYMMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class RfnKernel:
    "Normalization window h[k], k = -(L_h - 1)/2 .. (L_h - 1)/2"

    samples: np.ndarray
    shape: KernelShape = KernelShape.CUSTOM
    sigma_h: Optional[float] = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        _checkKernel(samples)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def half_width(self) -> int:
        return self.samples.size // 2

    def isStrictlyDecreasing(self) -> bool:
        "True if h[k] > h[k + 1] for every k >= 0"
        side = self.samples[self.half_width :]
        return bool(np.all(np.diff(side) < 0))


def _checkKernel(samples: np.ndarray):
    if samples.size % 2 != 1:
        raise KernelInvariantError(f"Kernel length must be odd, got {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise KernelInvariantError("Kernel samples must be finite")
    if np.any(samples < 0):
        raise KernelInvariantError("Kernel samples must be non negative")
    if not np.allclose(samples, samples[::-1], rtol=0, atol=_SYMMETRY_TOLERANCE):
        raise KernelInvariantError("Kernel must be symmetric around its center")
    center = samples[samples.size // 2]
    if center != 1:
        raise KernelInvariantError(f"Kernel center must be 1, got {center}")
    if np.any(samples > 1):
        raise KernelInvariantError("Kernel samples must not exceed the center value")


def makeKernel(
    shape,
    length: int,
    sigma_h: Optional[float] = None,
    samples: Optional[Sequence[float]] = None,
) -> RfnKernel:
    """
    Creates a normalization kernel. Rectangular windows are all ones, Gaussian
    ones are exp(-k^2 / (2 sigma_h^2)), custom ones take ``samples`` and are
    validated.
    """
    shape = parseEnum(KernelShape, shape)
    if length < 1 or length % 2 != 1:
        raise InvalidParameterError(f"Kernel length must be odd and >= 1, got {length}")

    if shape is KernelShape.RECTANGULAR:
        return RfnKernel(np.ones(length), shape)

    if shape is KernelShape.GAUSSIAN:
        if sigma_h is None or not sigma_h > 0:
            raise InvalidParameterError(f"Gaussian kernels need sigma_h > 0, got {sigma_h}")
        k = np.arange(-(length // 2), length // 2 + 1)
        return RfnKernel(np.exp(-(k ** 2) / (2.0 * sigma_h ** 2)), shape, sigma_h)

    if samples is None:
        raise InvalidParameterError("Custom kernels need explicit samples")
    samples = np.asarray(samples, dtype=float)
    if samples.size != length:
        raise InvalidParameterError(
            f"Custom kernel has {samples.size} samples, expected {length}"
        )
    return RfnKernel(samples, shape)


def checkKernelLength(kernel: RfnKernel, filter_length: int) -> bool:
    "Warns when the window is shorter than half of the filter"
    if 2 * len(kernel) < filter_length:
        _logger.warning(
            "Normalization window of %d samples is shorter than half of the "
            "%d samples filter",
            len(kernel),
            filter_length,
        )
        return False
    return True


@dataclass(frozen=True, eq=False)
class EnergyField:
    """
    Local energy sigma and its clipped version, where samples below tau are
    replaced by 1. ``clipped`` and ``tau`` are None until clipped.
    """

    sigma: np.ndarray
    clipped: Optional[np.ndarray] = None
    tau: Optional[float] = None


def localEnergy(y, kernel: RfnKernel) -> EnergyField:
    "sigma[k] = sqrt(sum_n h[n] y[k - n]^2), zero padded at the edges"
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise InvalidParameterError(f"Expected a non empty vector, got shape {y.shape}")
    energy = signal.convolve(y ** 2, kernel.samples, mode="same", method="direct")
    return EnergyField(sigma=np.sqrt(np.maximum(energy, 0.0)))


def clipEnergy(sigma, tau: float) -> EnergyField:
    "Keeps sigma where sigma >= tau, uses 1 elsewhere"
    if not tau > 0:
        raise InvalidParameterError(f"Clip level must be positive, got {tau}")
    if isinstance(sigma, EnergyField):
        sigma = sigma.sigma
    sigma = np.asarray(sigma, dtype=float)
    clipped = np.where(sigma >= tau, sigma, 1.0)
    return EnergyField(sigma=sigma, clipped=clipped, tau=float(tau))


def normalize(r, field: EnergyField) -> np.ndarray:
    "Applies the diagonal weights 1 / clipped to r"
    if field.clipped is None:
        raise InvalidParameterError("Energy field must be clipped before normalizing")
    r = np.asarray(r, dtype=float)
    if r.shape != field.clipped.shape:
        raise InvalidParameterError(
            f"Length mismatch: {r.shape} vs {field.clipped.shape}"
        )
    return r / field.clipped


def _checkBeta(beta: float):
    if not beta >= 0:
        raise InvalidParameterError(f"Threshold must be >= 0, got {beta}")


def softThreshold(z, beta: float) -> np.ndarray:
    "S_beta(z) = ReLU(z - beta) - ReLU(-z - beta)"
    _checkBeta(beta)
    z = np.asarray(z, dtype=float)
    return np.maximum(z - beta, 0.0) - np.maximum(-z - beta, 0.0)


def hardThreshold(z, beta: float) -> np.ndarray:
    "Keeps entries with |z| > beta (strict)"
    _checkBeta(beta)
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) > beta, z, 0.0)


def thresholdIndicator(z, beta: float) -> np.ndarray:
    "1 where |z| >= beta (inclusive), 0 elsewhere"
    _checkBeta(beta)
    z = np.asarray(z, dtype=float)
    return (np.abs(z) >= beta).astype(float)
