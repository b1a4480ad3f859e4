"""
Support recovery guarantees of the first RFN-ITA iteration.

Each checker evaluates the sufficient condition of one recovery theorem on a
code vector x and a dictionary and returns the admissible interval of the
first threshold. Amplitudes are taken relative to unit norm atoms, i.e. x is
scaled by the atom norms before evaluating any bound.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from rfncsc.common import (
    DictionaryKind,
    InvalidParameterError,
    KernelShape,
    KernelShapeError,
    Theorem,
)
from rfncsc.dictionary import ConvDictionary
from rfncsc.rfn import RfnKernel, clipEnergy, localEnergy
from rfncsc.solvers import rfnScore

_logger = logging.getLogger(__name__)


@dataclass
class StripeStats:
    """
    Stripe sparsity of a code vector. Per support index arrays are aligned
    with ``support`` and describe the stripe of ``stripe_length`` shifts
    centered on that index, except ``x_minus_i`` which spans twice as far.
    """

    s: int
    stripe_length: int
    support: np.ndarray
    x_min_i: np.ndarray
    x_max_i: np.ndarray
    x_minus_i: np.ndarray
    x_min: float
    x_max: float


@dataclass
class GuaranteeReport:
    theorem: Theorem
    condition_holds: bool
    lhs: Optional[float]
    rhs: Optional[float]
    beta1_interval: Optional[Tuple[float, float]]
    inputs: Dict[str, Any] = field(default_factory=dict)
    reason: Optional[str] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def toDict(self) -> Dict[str, Any]:
        "JSON friendly version, non finite numbers become strings"
        result = asdict(self)
        result["theorem"] = self.theorem.value
        return _jsonSafe(result)


@dataclass
class FirstIterationMargin:
    "Smallest on-support and largest off-support first iteration score"

    on_support_min: Optional[float]
    off_support_max: Optional[float]

    @property
    def separable(self) -> bool:
        if self.on_support_min is None:
            return False
        if self.off_support_max is None:
            return True
        return self.on_support_min > self.off_support_max


def _jsonSafe(value):
    if isinstance(value, dict):
        return {key: _jsonSafe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonSafe(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonSafe(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def separationSamples(nu: float, omega0: float, sample_interval: float) -> int:
    """
    Minimal spike separation in samples for the separation constant nu,
    F_s * nu * sigma with sigma = 1 / omega0, rounded up
    """
    if not nu > 0:
        raise InvalidParameterError(f"nu must be positive, got {nu}")
    value = nu / (omega0 * sample_interval)
    # Keep exact multiples from being pushed up by rounding noise
    return max(1, int(math.ceil(value - 1e-9)))


def separationConstant(delta_k: int, omega0: float, sample_interval: float) -> float:
    "Inverse of separationSamples"
    return delta_k * omega0 * sample_interval


def _unitCode(x, dictionary: ConvDictionary) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dictionary.n_atoms,):
        raise InvalidParameterError(
            f"Code vector must have {dictionary.n_atoms} entries, got shape {x.shape}"
        )
    return x * dictionary.atom_norms


def stripeStats(x, kernel_length: int, filter_length: int, n_filters: int = 1) -> StripeStats:
    """
    Scans every stripe of L_s = kernel_length + filter_length - 1 consecutive
    shifts (all filters) and computes the stripe sparsity s, i.e. the largest
    number of nonzeros feeding a single normalization window. ``x_minus_i``
    sums the other spikes within L_s - 1 shifts of each spike.
    """
    if kernel_length < 1 or kernel_length % 2 != 1:
        raise InvalidParameterError(f"Kernel length must be odd, got {kernel_length}")
    x = np.abs(np.asarray(x, dtype=float))
    if x.size % n_filters:
        raise InvalidParameterError(f"{x.size} coefficients do not split in {n_filters} filters")
    magnitudes = x.reshape(n_filters, -1)
    n_x = magnitudes.shape[1]
    stripe_length = kernel_length + filter_length - 1
    half = (stripe_length - 1) // 2
    reach = stripe_length - 1

    counts = np.count_nonzero(magnitudes, axis=0)
    s = int(np.convolve(counts, np.ones(stripe_length, dtype=int)).max()) if counts.any() else 0

    support = np.flatnonzero(x)
    x_min_i = np.zeros(support.size)
    x_max_i = np.zeros(support.size)
    x_minus_i = np.zeros(support.size)
    for position, index in enumerate(support):
        shift = index % n_x
        stripe = magnitudes[:, max(0, shift - half) : shift + half + 1]
        values = stripe[stripe != 0]
        x_min_i[position] = values.min()
        x_max_i[position] = values.max()
        around = magnitudes[:, max(0, shift - reach) : shift + reach + 1]
        x_minus_i[position] = around.sum() - x[index]

    nonzero = x[support]
    return StripeStats(
        s=s,
        stripe_length=stripe_length,
        support=support,
        x_min_i=x_min_i,
        x_max_i=x_max_i,
        x_minus_i=x_minus_i,
        x_min=float(nonzero.min()) if nonzero.size else 0.0,
        x_max=float(nonzero.max()) if nonzero.size else 0.0,
    )


def minimalGap(x, n_filters: int = 1) -> Optional[int]:
    "Smallest shift difference between two spikes of the same filter"
    x = np.asarray(x, dtype=float)
    if x.size % n_filters:
        raise InvalidParameterError(f"{x.size} coefficients do not split in {n_filters} filters")
    gaps = [
        int(np.diff(np.flatnonzero(row)).min())
        for row in x.reshape(n_filters, -1)
        if np.count_nonzero(row) > 1
    ]
    return min(gaps) if gaps else None


def sripBounds(dictionary: ConvDictionary, x_stripe) -> Tuple[float, float]:
    """
    Stripe restricted isometry envelope (1 -+ (s - 1) mu) ||x||^2 of
    ||D x||^2 for a code with s nonzeros
    """
    x = _unitCode(x_stripe, dictionary)
    s = int(np.count_nonzero(x))
    energy = float(x @ x)
    if s <= 1:
        return energy, energy
    spread = (s - 1) * dictionary.mutual_coherence
    return (1 - spread) * energy, (1 + spread) * energy


def theorem1Bounds(
    s: int,
    mu: float,
    x_min_i: Sequence[float],
    x_max_i: Sequence[float],
    eps_d: float = 0.0,
    tau: float = 1.0,
    x_min: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Plug-in evaluation of the noisy rectangular window recovery condition.
    Returns lhs, rhs, the beta1 window (low, high) and a failure reason when
    the bound is vacuous.
    """
    x_min_i = np.asarray(x_min_i, dtype=float)
    x_max_i = np.asarray(x_max_i, dtype=float)
    if x_min is None:
        x_min = float(x_min_i.min())
    eps_s = eps_d / tau
    eps_tilde = eps_d / x_min if x_min > 0 else math.inf
    result: Dict[str, Any] = {
        "eps_s": eps_s,
        "eps_tilde": eps_tilde,
        "lhs": None,
        "rhs": None,
        "low": None,
        "high": None,
        "reason": None,
    }

    srip = 1 - (s - 1) * mu
    if srip <= 0:
        result["reason"] = "sRIP denominator nonpositive"
        return result
    denominator = math.sqrt(srip) - eps_tilde
    if denominator <= 0:
        result["reason"] = "noise level exceeds the smallest amplitude"
        return result

    result["lhs"] = float(np.min(x_min_i / (x_max_i + eps_d / s)))
    result["rhs"] = (s * mu / (1 + mu)) * (1 + math.sqrt(s) / denominator) + (
        2 * s * eps_s / (1 + mu)
    )
    result["high"] = float(np.min((1 + mu) * x_min_i / (s * x_max_i + eps_d))) - mu - eps_s
    result["low"] = math.sqrt(s) * mu / denominator + eps_s
    return result


def _a1Violation(x, dictionary: ConvDictionary, kernel: RfnKernel, tau: float) -> float:
    """
    Largest ||sigma_y[c_i] a_i - d_i|| over the support, a_i being the unit
    atom d_i normalized by the clipped energy of y = Dx and c_i its center
    """
    support = np.flatnonzero(x)
    if support.size == 0:
        return 0.0
    y = dictionary.apply(x)
    energy = clipEnergy(localEnergy(y, kernel).sigma, tau)
    atoms = dictionary.columns(support) / dictionary.atom_norms[support]
    centers = support % dictionary.n_x + dictionary.center_offset
    violation = 0.0
    for column, center in enumerate(centers):
        atom = atoms[:, column]
        normalized = atom / energy.clipped
        violation = max(
            violation, float(np.linalg.norm(energy.sigma[center] * normalized - atom))
        )
    return violation


def _inputs(**kwargs) -> Dict[str, Any]:
    return {key: value for key, value in kwargs.items() if value is not None}


def checkTheorem1(
    x,
    dictionary: ConvDictionary,
    kernel: RfnKernel,
    eps_d: float = 0.0,
    tau: float = 0.4,
) -> GuaranteeReport:
    """
    Recovery condition for a rectangular window as long as the filter, with
    additive noise of stripe norm eps_d. With eps_d = 0 this is the noise free
    condition.
    """
    if kernel.shape is not KernelShape.RECTANGULAR or not np.all(kernel.samples == 1):
        raise KernelShapeError("This condition assumes a rectangular window")
    if len(kernel) != dictionary.filter_length:
        raise InvalidParameterError(
            f"Window length {len(kernel)} must match the filter length "
            f"{dictionary.filter_length}"
        )
    if eps_d < 0 or not tau > 0:
        raise InvalidParameterError("eps_d must be >= 0 and tau > 0")

    unit = _unitCode(x, dictionary)
    stats = stripeStats(unit, len(kernel), dictionary.filter_length, dictionary.n_filters)
    mu = dictionary.mutual_coherence

    if stats.s == 0:
        return GuaranteeReport(
            Theorem.T1, False, None, None, None, _inputs(mu=mu, s=0), "empty code"
        )

    bounds = theorem1Bounds(
        stats.s, mu, stats.x_min_i, stats.x_max_i, eps_d, tau, stats.x_min
    )
    holds = bounds["reason"] is None and bounds["lhs"] > bounds["rhs"]
    interval = None
    if holds and bounds["high"] > bounds["low"]:
        interval = (bounds["low"], bounds["high"])

    return GuaranteeReport(
        theorem=Theorem.T1,
        condition_holds=holds,
        lhs=bounds["lhs"],
        rhs=bounds["rhs"],
        beta1_interval=interval,
        inputs=_inputs(
            mu=mu,
            s=stats.s,
            eps_d=eps_d,
            eps_s=bounds["eps_s"],
            eps_tilde=bounds["eps_tilde"],
            tau=tau,
        ),
        reason=bounds["reason"],
        diagnostics={"a1_violation": _a1Violation(unit, dictionary, kernel, tau)},
    )


def checkTheorem2(
    x, dictionary: ConvDictionary, kernel_length: Optional[int] = None
) -> GuaranteeReport:
    """
    Noise free recovery when every stripe holds at least one spike: on the
    support the normalized correlation is at least 1, off the support it is at
    most mu, so any first threshold in (mu, 1) recovers the support
    """
    if kernel_length is None:
        kernel_length = dictionary.filter_length
    unit = _unitCode(x, dictionary)
    stats = stripeStats(unit, kernel_length, dictionary.filter_length, dictionary.n_filters)
    mu = dictionary.mutual_coherence

    reason = None
    if stats.s == 0:
        reason = "empty code"
    elif stats.s > 1:
        reason = f"stripe sparsity is {stats.s}"
    elif mu >= 1:
        reason = "mutual coherence is 1"
    holds = reason is None

    return GuaranteeReport(
        theorem=Theorem.T2,
        condition_holds=holds,
        lhs=1.0,
        rhs=mu,
        beta1_interval=(mu, 1.0) if holds else None,
        inputs=_inputs(mu=mu, s=stats.s),
        reason=reason,
    )


def windowedAtomNorms(dictionary: ConvDictionary, kernel: RfnKernel) -> np.ndarray:
    """
    (m, L_s) array with ||H d|| for unit norm atoms whose center is offset by
    c = -(L_s - 1)/2 .. (L_s - 1)/2 from the window center, H = diag(sqrt(h))
    """
    if dictionary.kind is not DictionaryKind.TIME_INVARIANT:
        raise InvalidParameterError("Windowed atom norms need a time invariant dictionary")
    bank = dictionary.bank / np.linalg.norm(dictionary.bank, axis=1, keepdims=True)
    half_window = kernel.half_width
    half_stripe = (len(kernel) + dictionary.filter_length - 2) // 2
    center = dictionary.center_offset
    rows = np.arange(-half_window, half_window + 1)

    result = np.zeros((bank.shape[0], 2 * half_stripe + 1))
    for column, offset in enumerate(range(-half_stripe, half_stripe + 1)):
        indices = rows - offset + center
        valid = (indices >= 0) & (indices < dictionary.filter_length)
        energy = kernel.samples[valid] * bank[:, indices[valid]] ** 2
        result[:, column] = np.sqrt(energy.sum(axis=1))
    return result


def _windowedCoherence(dictionary: ConvDictionary, kernel: RfnKernel) -> float:
    "Coherence of the atoms centered inside one window, seen through sqrt(h)"
    half_window = kernel.half_width
    center = dictionary.center_offset
    rows = np.arange(-half_window, half_window + 1)
    columns = []
    for samples in dictionary.bank:
        for offset in range(-half_window, half_window + 1):
            indices = rows - offset + center
            valid = (indices >= 0) & (indices < dictionary.filter_length)
            atom = np.zeros(rows.size)
            atom[valid] = samples[indices[valid]]
            columns.append(np.sqrt(kernel.samples) * atom)
    matrix = np.column_stack(columns)
    norms = np.linalg.norm(matrix, axis=0)
    matrix = matrix[:, norms > 0] / norms[norms > 0]
    if matrix.shape[1] < 2:
        return 0.0
    gram = np.abs(matrix.T @ matrix)
    np.fill_diagonal(gram, 0)
    return float(min(gram.max(), 1.0))


def _pairwiseBound(dictionary: ConvDictionary, profile: np.ndarray, s: int, half_window: int) -> float:
    "max sqrt(s) |d_j^T d_k| / H_d[k - j] over atom pairs centered inside the window"
    bank = dictionary.bank / np.linalg.norm(dictionary.bank, axis=1, keepdims=True)
    middle = profile.shape[1] // 2
    zero_lag = dictionary.filter_length - 1
    result = 0.0
    for p in range(bank.shape[0]):
        for q in range(bank.shape[0]):
            corr = np.correlate(bank[p], bank[q], mode="full")
            for lag in range(-half_window, half_window + 1):
                if (p == q and lag == 0) or abs(lag) > zero_lag:
                    continue
                weight = profile[q, middle + lag]
                if weight > 0:
                    value = math.sqrt(s) * abs(corr[zero_lag + lag]) / weight
                    result = max(result, value)
    return result


def checkTheorem3(
    x,
    dictionary: ConvDictionary,
    kernel: RfnKernel,
    nu: float,
    omega0: float,
) -> GuaranteeReport:
    """
    Recovery condition with an attenuating (strictly decreasing) window of the
    filter's length, for spikes obeying the minimal separation of constant nu.
    Codes with two spikes of one filter closer than that separation fail.
    h_d_min is taken over the atoms centered inside the window.
    """
    if kernel.shape is KernelShape.RECTANGULAR or not kernel.isStrictlyDecreasing():
        raise KernelShapeError("This condition needs a strictly decreasing window")
    if len(kernel) != dictionary.filter_length:
        raise InvalidParameterError(
            f"Window length {len(kernel)} must match the filter length "
            f"{dictionary.filter_length}"
        )

    unit = _unitCode(x, dictionary)
    stats = stripeStats(unit, len(kernel), dictionary.filter_length, dictionary.n_filters)
    mu = dictionary.mutual_coherence
    delta_k = separationSamples(nu, omega0, dictionary.sample_interval)

    profile = windowedAtomNorms(dictionary, kernel)
    middle = profile.shape[1] // 2
    half_window = kernel.half_width
    h_d_nu = float(profile[:, middle + delta_k].max()) if delta_k <= middle else 0.0
    h_d_min = float(profile[:, middle - half_window : middle + half_window + 1].min())

    gap = minimalGap(unit, dictionary.n_filters)
    inputs = _inputs(
        mu=mu,
        s=stats.s,
        nu=nu,
        delta_k=delta_k,
        min_gap=gap,
        h_d_nu=h_d_nu,
        h_d_min=h_d_min,
    )
    diagnostics = {"mu_windowed": _windowedCoherence(dictionary, kernel)}

    if stats.s == 0:
        return GuaranteeReport(Theorem.T3, False, None, None, None, inputs, "empty code")
    if h_d_min <= 0:
        return GuaranteeReport(
            Theorem.T3, False, None, None, None, inputs, "window misses some atoms"
        )

    diagnostics["c8b_bound"] = _pairwiseBound(dictionary, profile, stats.s, half_window)

    magnitudes = unit[stats.support]
    lower = math.sqrt(stats.s) * mu / h_d_min
    upper = float(
        np.min(
            1
            - (h_d_nu + mu)
            * stats.x_minus_i
            / (np.abs(magnitudes) + h_d_nu * stats.x_minus_i)
        )
    )
    reason = None
    if gap is not None and gap < delta_k:
        reason = f"spikes {gap} shifts apart violate the minimal separation of {delta_k}"
    holds = reason is None and lower < upper

    return GuaranteeReport(
        theorem=Theorem.T3,
        condition_holds=holds,
        lhs=lower,
        rhs=upper,
        beta1_interval=(lower, upper) if holds else None,
        inputs=inputs,
        reason=reason,
        diagnostics=diagnostics,
    )


def separatedCoherence(dictionary: ConvDictionary, delta_k: int) -> float:
    """
    Coherence restricted to atoms at least delta_k shifts apart. A first
    threshold above it rejects the sidelobes of delta_k separated spikes.
    """
    if delta_k < 1:
        raise InvalidParameterError(f"delta_k must be >= 1, got {delta_k}")
    norms = dictionary.atom_norms
    if dictionary.kind is not DictionaryKind.TIME_INVARIANT:
        normalized = dictionary.toDense() / norms
        gram = np.abs(normalized.T @ normalized)
        shifts = np.arange(dictionary.n_atoms) % dictionary.n_x
        far = np.abs(shifts[:, None] - shifts[None, :]) >= delta_k
        return float(gram[far].max()) if far.any() else 0.0

    bank = dictionary.bank / np.linalg.norm(dictionary.bank, axis=1, keepdims=True)
    lags = np.arange(-(dictionary.filter_length - 1), dictionary.filter_length)
    mask = (np.abs(lags) >= delta_k) & (np.abs(lags) <= dictionary.n_x - 1)
    if not mask.any():
        return 0.0
    result = 0.0
    for p in range(bank.shape[0]):
        for q in range(bank.shape[0]):
            corr = np.correlate(bank[p], bank[q], mode="full")
            result = max(result, float(np.abs(corr[mask]).max()))
    return result


def firstIterationMargin(
    x, dictionary: ConvDictionary, kernel: RfnKernel, tau: float = 0.4
) -> FirstIterationMargin:
    """
    Observed first iteration scores for y = Dx. Any threshold strictly
    between the two returned values detects exactly the support of x.
    """
    x = np.asarray(x, dtype=float)
    score = np.abs(rfnScore(dictionary.apply(x), dictionary, kernel, tau))
    on_support = x != 0
    return FirstIterationMargin(
        on_support_min=float(score[on_support].min()) if on_support.any() else None,
        off_support_max=float(score[~on_support].max()) if (~on_support).any() else None,
    )


def suggestTau(x_min: float, dictionary: ConvDictionary, eps_d: float = 0.0) -> float:
    """
    Smallest clip level that keeps noise from being amplified when the
    weakest spike to detect has amplitude x_min and the noise has stripe norm
    eps_d: |x|_min * min_i ||d_i|| + eps_d
    """
    if x_min < 0 or eps_d < 0:
        raise InvalidParameterError("x_min and eps_d must be >= 0")
    return float(x_min * dictionary.atom_norms.min() + eps_d)


def noiseStripeNorm(noise_std: float, kernel_length: int) -> float:
    "Expected l2 norm of white noise over a stripe of kernel_length samples"
    return float(noise_std * math.sqrt(kernel_length))
