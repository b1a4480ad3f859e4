"""
Convolutional dictionaries built from seismic pulses.

Time invariant dictionaries hold a bank of m filters and apply them as linear
convolutions, so the data length is L_y = L_x + L_d - 1 and atom
i = p * L_x + l is filter p shifted to sample l. Time variant dictionaries hold
one Q-attenuated pulse per code sample and are materialized as a dense matrix.
Dictionaries are never normalized, solvers divide by ``atom_norms`` instead.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import fft as sp_fft  # type: ignore

from rfncsc.common import (
    DEFAULT_SAMPLE_INTERVAL,
    DegenerateAtomError,
    DictionaryKind,
    InvalidParameterError,
)

_logger = logging.getLogger(__name__)

# |g(t)| < 2e-4 beyond t = 7 / omega0
RICKER_SUPPORT = 7.0
# Energy kept by a truncated Ricker wavelet and by a windowed Q pulse
RICKER_ENERGY_FRACTION = 0.999
Q_PULSE_ENERGY_FRACTION = 0.99
# Minimum zero padding factor of the Q pulse frequency grid
Q_GRID_OVERSAMPLING = 8


@dataclass(frozen=True, eq=False)
class Wavelet:
    """
    Sampled pulse. ``center_index`` is the sample holding t = 0 and
    ``truncated`` flags pulses whose window dropped a relevant part of their
    energy.
    """

    samples: np.ndarray
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL
    center_index: Optional[int] = None
    truncated: bool = False

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        if samples.size % 2 != 1:
            raise InvalidParameterError(
                f"Wavelets must have an odd number of samples, got {samples.size}"
            )
        if not self.sample_interval > 0:
            raise InvalidParameterError(
                f"Sample interval must be positive, got {self.sample_interval}"
            )
        center = samples.size // 2 if self.center_index is None else self.center_index
        if not 0 <= center < samples.size:
            raise InvalidParameterError(f"Center index {center} is out of range")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "center_index", int(center))

    def __len__(self):
        return self.samples.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.samples))

    @property
    def peak(self) -> float:
        "Value at t = 0"
        return float(self.samples[self.center_index])


@dataclass(frozen=True)
class QModelParams:
    """
    Constant-Q earth model. ``q`` may be ``math.inf``, in which case pulses
    propagate without attenuation nor dispersion.
    """

    q: float
    omega0: float
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL

    def __post_init__(self):
        if not self.q > 0:
            raise InvalidParameterError(f"Q must be positive, got {self.q}")
        if not (self.omega0 > 0 and math.isfinite(self.omega0)):
            raise InvalidParameterError(f"omega0 must be positive, got {self.omega0}")
        if not self.sample_interval > 0:
            raise InvalidParameterError(
                f"Sample interval must be positive, got {self.sample_interval}"
            )

    @property
    def gamma(self) -> float:
        return 2.0 / math.pi * math.atan(1.0 / (2.0 * self.q))


def rickerHalfWidth(omega0: float, sample_interval: float) -> int:
    "Default half width in samples of a Ricker wavelet"
    return max(1, int(math.ceil(RICKER_SUPPORT / (omega0 * sample_interval))))


def _rickerSamples(omega0: float, sample_interval: float, half_width: int):
    t = np.arange(-half_width, half_width + 1) * sample_interval
    arg = (omega0 * t) ** 2
    return (1.0 - 0.5 * arg) * np.exp(-0.25 * arg)


def makeRicker(
    omega0: float,
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL,
    half_width: Optional[int] = None,
) -> Wavelet:
    """
    Ricker wavelet g(t) = (1 - w0^2 t^2 / 2) exp(-w0^2 t^2 / 4) sampled at
    t = k * sample_interval for |k| <= half_width. The default half width keeps
    the wavelet down to |g| < 2e-4.
    """
    if not (omega0 > 0 and math.isfinite(omega0)):
        raise InvalidParameterError(f"omega0 must be positive, got {omega0}")
    if not sample_interval > 0:
        raise InvalidParameterError(
            f"Sample interval must be positive, got {sample_interval}"
        )
    if half_width is None:
        half_width = rickerHalfWidth(omega0, sample_interval)
    if half_width < 1:
        raise InvalidParameterError(f"Half width must be >= 1, got {half_width}")

    samples = _rickerSamples(omega0, sample_interval, half_width)

    reference_width = max(half_width, 2 * rickerHalfWidth(omega0, sample_interval))
    reference = _rickerSamples(omega0, sample_interval, reference_width)
    fraction = float(np.sum(samples ** 2) / np.sum(reference ** 2))
    truncated = fraction < RICKER_ENERGY_FRACTION
    if truncated:
        _logger.warning(
            "Ricker wavelet with half width %d keeps only %.4f%% of its energy",
            half_width,
            100 * fraction,
        )

    return Wavelet(
        samples=samples,
        sample_interval=sample_interval,
        center_index=half_width,
        truncated=truncated,
    )


def _recenter(samples: np.ndarray, center: int, half: int) -> np.ndarray:
    "Crops or zero pads samples so that center lands at index half"
    result = np.zeros(2 * half + 1)
    for index, value in enumerate(samples):
        target = index - center + half
        if 0 <= target < result.size:
            result[target] = value
    return result


def makeQPulse(
    source: Wavelet,
    q: QModelParams,
    travel_time: float,
    out_len: Optional[int] = None,
) -> Wavelet:
    """
    Attenuates and disperses ``source`` as if it had travelled for
    ``travel_time`` seconds in a constant-Q medium. The propagation delay
    itself is removed so the result stays centered at its own t = 0.

    The spectrum of the source is evaluated on a zero padded grid at least
    8x longer than the output, multiplied by the dispersion and attenuation
    operators and transformed back, keeping the real part (the source is real
    so its spectrum is conjugate symmetric).
    """
    if travel_time < 0:
        raise InvalidParameterError(f"Travel time must be >= 0, got {travel_time}")
    if out_len is None:
        out_len = len(source)
    if out_len < 1 or out_len % 2 != 1:
        raise InvalidParameterError(f"Output length must be odd, got {out_len}")

    half = out_len // 2

    if travel_time == 0:
        return Wavelet(
            samples=_recenter(source.samples, source.center_index, half),
            sample_interval=source.sample_interval,
            center_index=half,
        )

    n_fft = sp_fft.next_fast_len(Q_GRID_OVERSAMPLING * max(out_len, len(source)))
    buffer = np.zeros(n_fft)
    buffer[(np.arange(len(source)) - source.center_index) % n_fft] = source.samples

    spectrum = sp_fft.rfft(buffer)
    omega = 2 * np.pi * sp_fft.rfftfreq(n_fft, d=source.sample_interval)

    # |w/w0|^-gamma, the w = 0 term is its removable limit of 1
    ratio = np.ones_like(omega)
    ratio[1:] = (omega[1:] / q.omega0) ** (-q.gamma)

    phase = omega * travel_time * (1.0 - ratio)
    if math.isinf(q.q):
        attenuation = np.ones_like(omega)
    else:
        attenuation = np.exp(-ratio * omega * travel_time / (2.0 * q.q))

    pulse = sp_fft.irfft(spectrum * np.exp(1j * phase) * attenuation, n=n_fft)
    window = pulse[np.arange(-half, half + 1) % n_fft]

    total = float(np.sum(pulse ** 2))
    fraction = float(np.sum(window ** 2)) / total if total > 0 else 1.0
    truncated = fraction < Q_PULSE_ENERGY_FRACTION
    if truncated:
        _logger.debug(
            "Q pulse at t=%.3fs truncated to %d samples keeps %.2f%% of its energy",
            travel_time,
            out_len,
            100 * fraction,
        )

    return Wavelet(
        samples=window,
        sample_interval=source.sample_interval,
        center_index=half,
        truncated=truncated,
    )


class ConvDictionary:
    """
    Convolutional dictionary D with n_y = n_x + filter_length - 1 rows and
    n_filters * n_x atoms. Instances are immutable and safe to share between
    threads.
    """

    def __init__(
        self,
        kind: DictionaryKind,
        filters: Sequence[Wavelet],
        n_x: int,
        bank: Optional[np.ndarray] = None,
        matrix: Optional[np.ndarray] = None,
        q_params: Optional[QModelParams] = None,
        truncated: bool = False,
    ):
        self._kind = kind
        self._filters = tuple(filters)
        self._n_x = int(n_x)
        self._q_params = q_params
        self._truncated = truncated

        if kind is DictionaryKind.TIME_INVARIANT:
            assert bank is not None
            self._bank = np.array(bank, dtype=float)
            self._bank.setflags(write=False)
            self._matrix = None
            self._filter_length = self._bank.shape[1]
            norms = np.linalg.norm(self._bank, axis=1)
            self._atom_norms = np.repeat(norms, self._n_x)
        else:
            assert matrix is not None
            self._matrix = np.array(matrix, dtype=float)
            self._matrix.setflags(write=False)
            self._bank = None
            self._filter_length = self._matrix.shape[0] - self._n_x + 1
            self._atom_norms = np.linalg.norm(self._matrix, axis=0)

        self._atom_norms.setflags(write=False)

    def __repr__(self):
        return (
            f"ConvDictionary(kind={self._kind.value}, m={self.n_filters}, "
            f"n_x={self._n_x}, n_y={self.n_y}, filter_length={self._filter_length})"
        )

    @classmethod
    def fromMatrix(
        cls, matrix: np.ndarray, sample_interval: float = DEFAULT_SAMPLE_INTERVAL
    ) -> "ConvDictionary":
        "Wraps an explicit matrix (e.g. read back from a trace-matrix file)"
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] < matrix.shape[1]:
            raise InvalidParameterError(
                f"Dictionary matrix must be tall, got shape {matrix.shape}"
            )
        n_y, n_x = matrix.shape
        filter_length = n_y - n_x + 1
        if filter_length % 2 != 1:
            raise InvalidParameterError(
                f"Implied filter length {filter_length} must be odd"
            )
        # First column is a placeholder filter, only sample_interval matters
        first = Wavelet(matrix[:filter_length, 0], sample_interval)
        return cls(DictionaryKind.TIME_VARIANT_Q, [first], n_x, matrix=matrix)

    @property
    def kind(self) -> DictionaryKind:
        return self._kind

    @property
    def filters(self):
        return self._filters

    @property
    def q_params(self) -> Optional[QModelParams]:
        return self._q_params

    @property
    def truncated(self) -> bool:
        return self._truncated

    @property
    def n_filters(self) -> int:
        return 1 if self._bank is None else self._bank.shape[0]

    @property
    def n_x(self) -> int:
        return self._n_x

    @property
    def n_y(self) -> int:
        return self._n_x + self._filter_length - 1

    @property
    def n_atoms(self) -> int:
        return self.n_filters * self._n_x

    @property
    def filter_length(self) -> int:
        return self._filter_length

    @property
    def center_offset(self) -> int:
        "Row offset between an atom's first sample and its t = 0 sample"
        return (self._filter_length - 1) // 2

    @property
    def sample_interval(self) -> float:
        return self._filters[0].sample_interval

    @property
    def atom_norms(self) -> np.ndarray:
        return self._atom_norms

    @property
    def bank(self) -> Optional[np.ndarray]:
        "(m, filter_length) filter bank for time invariant dictionaries"
        return self._bank

    def _checkCode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_atoms,):
            raise InvalidParameterError(
                f"Code vector must have {self.n_atoms} entries, got shape {x.shape}"
            )
        return x

    def _checkData(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n_y,):
            raise InvalidParameterError(
                f"Data vector must have {self.n_y} entries, got shape {r.shape}"
            )
        return r

    def apply(self, x) -> np.ndarray:
        "Returns D x, for time invariant dictionaries a sum of m convolutions"
        x = self._checkCode(x)
        if self._matrix is not None:
            return self._matrix @ x
        y = np.zeros(self.n_y)
        for p, code in enumerate(x.reshape(self.n_filters, self._n_x)):
            y += np.convolve(code, self._bank[p])
        return y

    def adjoint(self, r) -> np.ndarray:
        "Returns D^T r, the correlation of every filter with r at every shift"
        r = self._checkData(r)
        if self._matrix is not None:
            return self._matrix.T @ r
        return np.concatenate(
            [np.correlate(r, self._bank[p], mode="valid") for p in range(self.n_filters)]
        )

    def columns(self, indices: Iterable[int]) -> np.ndarray:
        "Dense (n_y, len(indices)) matrix with the requested atoms"
        indices = [int(i) for i in indices]
        if self._matrix is not None:
            return np.array(self._matrix[:, indices])
        result = np.zeros((self.n_y, len(indices)))
        for column, index in enumerate(indices):
            if not 0 <= index < self.n_atoms:
                raise InvalidParameterError(f"Atom index {index} out of range")
            p, l = divmod(index, self._n_x)
            result[l : l + self._filter_length, column] = self._bank[p]
        return result

    def column(self, index: int) -> np.ndarray:
        return self.columns([index])[:, 0]

    def toDense(self) -> np.ndarray:
        if self._matrix is not None:
            return np.array(self._matrix)
        return self.columns(range(self.n_atoms))

    def centerValues(self) -> np.ndarray:
        "Value of each atom at its own t = 0 sample (d_k^p)"
        if self._matrix is not None:
            rows = np.arange(self._n_x) + self.center_offset
            return self._matrix[rows, np.arange(self._n_x)]
        return np.repeat(self._bank[:, self.center_offset], self._n_x)

    @cached_property
    def mutual_coherence(self) -> float:
        "Largest absolute correlation coefficient between two distinct atoms"
        if self.n_atoms < 2:
            raise InvalidParameterError("Mutual coherence needs at least 2 atoms")
        if np.any(self._atom_norms == 0):
            raise DegenerateAtomError("Dictionary has zero norm atoms")

        if self._matrix is not None:
            normalized = self._matrix / self._atom_norms
            gram = np.abs(normalized.T @ normalized)
            np.fill_diagonal(gram, 0)
            return float(min(gram.max(), 1.0))

        result = 0.0
        norms = np.linalg.norm(self._bank, axis=1)
        lags = np.arange(-(self._filter_length - 1), self._filter_length)
        # Atoms only exist at shifts 0..n_x - 1
        reachable = np.abs(lags) <= self._n_x - 1
        for p in range(self.n_filters):
            for q in range(p, self.n_filters):
                mask = reachable & (lags != 0) if p == q else reachable
                if not mask.any():
                    continue
                corr = np.correlate(self._bank[p], self._bank[q], mode="full")
                result = max(result, np.abs(corr[mask]).max() / (norms[p] * norms[q]))

        _logger.debug("Mutual coherence of %s is %.4f", self, result)
        return float(min(result, 1.0))


def buildDictionary(filters: Sequence[Wavelet], n_x: int) -> ConvDictionary:
    """
    Time invariant dictionary made of all n_x shifts of every filter. Filters
    of different lengths are zero padded around their center to the longest
    one.
    """
    filters = list(filters)
    if not filters:
        raise InvalidParameterError("At least one filter is required")
    if n_x < 1:
        raise InvalidParameterError(f"n_x must be >= 1, got {n_x}")
    intervals = {f.sample_interval for f in filters}
    if len(intervals) != 1:
        raise InvalidParameterError(
            f"All filters must share the sample interval, got {sorted(intervals)}"
        )

    half = max(max(f.center_index, len(f) - 1 - f.center_index) for f in filters)
    bank = np.vstack([_recenter(f.samples, f.center_index, half) for f in filters])

    return ConvDictionary(DictionaryKind.TIME_INVARIANT, filters, n_x, bank=bank)


def _qPulseLength(source: Wavelet, q: QModelParams, n_x: int) -> int:
    """
    Shortest odd window (grown by 1.5x steps) that holds the most attenuated
    pulse of the dictionary without truncation
    """
    length = len(source)
    travel_time = n_x * source.sample_interval
    for _ in range(16):
        if not makeQPulse(source, q, travel_time, length).truncated:
            break
        length = 2 * int(math.ceil(0.75 * length)) + 1
    return length


def buildQDictionary(
    source: Wavelet,
    q: QModelParams,
    n_x: int,
    out_len: Optional[int] = None,
) -> ConvDictionary:
    """
    Time variant dictionary where column n (0 based) holds the source pulse
    after travelling t_n = (n + 1) * sample_interval through the Q model,
    placed at delay n. The common pulse length defaults to the shortest
    window that holds the last (most broadened) pulse.
    """
    if n_x < 1:
        raise InvalidParameterError(f"n_x must be >= 1, got {n_x}")
    if not math.isclose(source.sample_interval, q.sample_interval):
        raise InvalidParameterError(
            "Source wavelet and Q model must share the sample interval"
        )
    if out_len is None:
        out_len = _qPulseLength(source, q, n_x)

    matrix = np.zeros((n_x + out_len - 1, n_x))
    truncated: List[int] = []
    for n in range(n_x):
        pulse = makeQPulse(source, q, (n + 1) * source.sample_interval, out_len)
        matrix[n : n + out_len, n] = pulse.samples
        if pulse.truncated:
            truncated.append(n)

    if truncated:
        _logger.warning(
            "%d of %d Q pulses were truncated to %d samples",
            len(truncated),
            n_x,
            out_len,
        )
    _logger.info(
        "Built Q dictionary: Q=%s, gamma=%.5f, n_x=%d, pulse length %d",
        q.q,
        q.gamma,
        n_x,
        out_len,
    )

    return ConvDictionary(
        DictionaryKind.TIME_VARIANT_Q,
        [source],
        n_x,
        matrix=matrix,
        q_params=q,
        truncated=bool(truncated),
    )
