"""
Sparse coding solvers: RFN-ITA with its amplitude variants, the support
detection variant, the ISTA baseline and a fixed-parameter unrolled RFN-ITA
forward pass, plus the image level driver that solves every trace
independently.
"""

import logging
import math
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg  # type: ignore
from scipy.sparse.linalg import LinearOperator, eigsh  # type: ignore

from rfncsc.common import (
    AmplitudeMode,
    BoundaryError,
    InvalidParameterError,
    RfnCscError,
    SolverName,
    parseEnum,
)
from rfncsc.dictionary import ConvDictionary
from rfncsc.logger import TRACE
from rfncsc.rfn import (
    RfnKernel,
    clipEnergy,
    localEnergy,
    normalize,
    softThreshold,
    thresholdIndicator,
)

_logger = logging.getLogger(__name__)

# Gram matrices up to this size are handled by a dense eigensolver
_DENSE_GRAM_LIMIT = 64
# ISTA's default step constant relative to the spectral norm estimate
ISTA_C_MARGIN = 1.001
# Binarization level of the accumulated support detection indicator
SUPPORT_LEVEL = 0.5
# Singular values below this fraction of the largest one are dropped when
# solving for the amplitudes of a detected support
LSTSQ_RCOND = 1e-2


@dataclass(frozen=True)
class SolverConfig:
    """
    RFN-ITA parameters. ``betas`` and ``taus`` hold the explicit per iteration
    values, past the end of ``betas`` each threshold is the previous one times
    ``beta_decay`` and past the end of ``taus`` the last clip level is reused.
    The first update uses ``first_step`` and later ones use ``step``.
    """

    kernel: RfnKernel
    betas: Tuple[float, ...] = (0.95, 0.88)
    beta_decay: float = 0.5
    taus: Tuple[float, ...] = (0.4,)
    step: float = 0.5
    first_step: float = 1.0
    max_iters: int = 4
    stop_tol: float = 1e-4
    amplitude_mode: AmplitudeMode = AmplitudeMode.RESIDUAL_APPROX
    peak_only: bool = False
    center_shift: bool = False

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(
            self, "amplitude_mode", parseEnum(AmplitudeMode, self.amplitude_mode)
        )
        if not self.betas or any(not b >= 0 for b in self.betas):
            raise InvalidParameterError(f"Thresholds must be >= 0, got {self.betas}")
        if not self.taus or any(not t > 0 for t in self.taus):
            raise InvalidParameterError(f"Clip levels must be > 0, got {self.taus}")
        if not 0 < self.step <= 1:
            raise InvalidParameterError(f"Step must be in (0, 1], got {self.step}")
        if not 0 < self.first_step <= 1:
            raise InvalidParameterError(
                f"First step must be in (0, 1], got {self.first_step}"
            )
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.beta_decay > 0:
            raise InvalidParameterError(
                f"Threshold decay must be positive, got {self.beta_decay}"
            )
        if not self.stop_tol >= 0:
            raise InvalidParameterError(f"Stop tolerance must be >= 0, got {self.stop_tol}")

    def betaAt(self, theta: int) -> float:
        "Threshold of iteration theta (1 based)"
        if theta <= len(self.betas):
            return self.betas[theta - 1]
        return self.betas[-1] * self.beta_decay ** (theta - len(self.betas))

    def tauAt(self, theta: int) -> float:
        "Clip level of iteration theta (1 based)"
        return self.taus[min(theta, len(self.taus)) - 1]

    def stepAt(self, theta: int) -> float:
        return self.first_step if theta == 1 else self.step


@dataclass(frozen=True)
class IstaConfig:
    "``beta`` is lambda / c; ``c`` defaults to 1.001 times the spectral norm"

    beta: float = 0.14
    c: Optional[float] = None
    max_iters: int = 10000
    stop_tol: float = 1e-4

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidParameterError(f"ISTA beta must be positive, got {self.beta}")
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True, eq=False)
class UnrolledLayer:
    dictionary: ConvDictionary
    beta: float
    alpha: float = 1.0


@dataclass
class SolverRun:
    x: np.ndarray
    support: np.ndarray
    iterations_used: int
    residual_norms: List[float]
    converged: bool
    first_iter_x: np.ndarray
    rank_deficient: bool = False
    costs: List[float] = field(default_factory=list)


@dataclass
class ImageRun:
    "Solution of every column of an image, in column order"

    x_hat: np.ndarray
    x_first: np.ndarray
    runs: List[Optional[SolverRun]]
    statuses: List[str]

    @property
    def iterations(self) -> np.ndarray:
        return np.array([run.iterations_used for run in self.runs if run is not None])

    @property
    def mean_iterations(self) -> Optional[float]:
        iterations = self.iterations
        return float(iterations.mean()) if iterations.size else None


def _checkData(y, dictionary: ConvDictionary) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (dictionary.n_y,):
        raise InvalidParameterError(
            f"Data vector must have {dictionary.n_y} entries, got shape {y.shape}"
        )
    return y


def _requireSignature(dictionary: ConvDictionary):
    if dictionary.n_filters != 1:
        raise InvalidParameterError(
            f"A single filter dictionary is required, got {dictionary.n_filters}"
        )
    if np.any(dictionary.centerValues() == 0):
        raise InvalidParameterError("Atoms must be nonzero at their center sample")


def _centerSamples(r: np.ndarray, dictionary: ConvDictionary) -> np.ndarray:
    "r[k + center_offset] / d_k[center] for every code sample k"
    rows = np.arange(dictionary.n_x) + dictionary.center_offset
    return r[rows] / dictionary.centerValues()


def spectralNormSq(dictionary: ConvDictionary, tol: float = 1e-6) -> float:
    "Largest eigenvalue of D^T D"
    n = dictionary.n_atoms
    if n <= _DENSE_GRAM_LIMIT:
        dense = dictionary.toDense()
        return float(linalg.eigvalsh(dense.T @ dense)[-1])

    operator = LinearOperator(
        (n, n),
        matvec=lambda v: dictionary.adjoint(dictionary.apply(np.ravel(v))),
        dtype=float,
    )
    start = np.random.default_rng(0).standard_normal(n)
    value = eigsh(
        operator, k=1, which="LA", v0=start, tol=tol * 1e-3, return_eigenvectors=False
    )
    return float(value[0])


def _lstsqOnSupport(
    y: np.ndarray,
    dictionary: ConvDictionary,
    support: np.ndarray,
    rcond: Optional[float] = LSTSQ_RCOND,
) -> Tuple[np.ndarray, bool]:
    x = np.zeros(dictionary.n_atoms)
    if support.size == 0:
        return x, False
    if support.size > dictionary.n_y:
        raise InvalidParameterError(
            f"Support of {support.size} atoms exceeds the {dictionary.n_y} data samples"
        )
    columns = dictionary.columns(support)
    solution, _, rank, singular = linalg.lstsq(
        columns, y, cond=rcond, lapack_driver="gelsd"
    )
    x[support] = solution
    deficient = rank < support.size
    if deficient:
        _logger.warning(
            "Rank deficient subsystem (rank %d for %d atoms, condition %.3g), "
            "using the minimum norm solution",
            rank,
            support.size,
            singular[0] / singular[-1] if singular[-1] > 0 else math.inf,
        )
    return x, deficient


def lsRefine(
    y, dictionary: ConvDictionary, support, rcond: Optional[float] = LSTSQ_RCOND
) -> np.ndarray:
    """
    Minimum norm least squares amplitudes on the support, zeros elsewhere.
    Directions with singular values below ``rcond`` times the largest one are
    dropped, None keeps everything above machine precision.
    """
    y = _checkData(y, dictionary)
    support = np.unique(np.asarray(support, dtype=int))
    if support.size and (support[0] < 0 or support[-1] >= dictionary.n_atoms):
        raise InvalidParameterError("Support index out of range")
    return _lstsqOnSupport(y, dictionary, support, rcond)[0]


def signatureAmplitude(y, support, dictionary: ConvDictionary) -> np.ndarray:
    "Reads each support amplitude from the data sample at the atom's center"
    y = _checkData(y, dictionary)
    _requireSignature(dictionary)
    support = np.asarray(support, dtype=int)
    x = np.zeros(dictionary.n_atoms)
    if support.size == 0:
        return x
    rows = support + dictionary.center_offset
    if support.min() < 0 or support.max() >= dictionary.n_x or rows.max() >= y.size:
        raise BoundaryError(f"Support {support.tolist()} has centers outside the data")
    x[support] = y[rows] / dictionary.centerValues()[support]
    return x


def _keepPeaks(indicator: np.ndarray, score: np.ndarray, n_x: int) -> np.ndarray:
    "Keeps the largest |score| of each run of adjacent detections"
    result = np.zeros_like(indicator)
    for start in range(0, indicator.size, n_x):
        block = indicator[start : start + n_x]
        index = 0
        while index < n_x:
            if not block[index]:
                index += 1
                continue
            end = index
            while end < n_x and block[end]:
                end += 1
            peak = start + index + int(np.argmax(np.abs(score[start + index : start + end])))
            result[peak] = 1.0
            index = end
    return result


def rfnScore(r, dictionary: ConvDictionary, kernel: RfnKernel, tau: float) -> np.ndarray:
    "Normalized correlation W_D D^T W r, W being 1 / clipped local energy of r"
    field_ = clipEnergy(localEnergy(r, kernel).sigma, tau)
    return dictionary.adjoint(normalize(r, field_)) / dictionary.atom_norms


def _detect(
    r: np.ndarray,
    dictionary: ConvDictionary,
    kernel: RfnKernel,
    tau: float,
    beta: float,
    peak_only: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    "Indicator of |score| >= beta and the score itself"
    score = rfnScore(r, dictionary, kernel, tau)
    indicator = thresholdIndicator(score, beta)
    if peak_only:
        indicator = _keepPeaks(indicator, score, dictionary.n_x)
    return indicator, score


def rfnIta(y, dictionary: ConvDictionary, cfg: SolverConfig) -> SolverRun:
    """
    Receptive field normalization iterative thresholding. Every iteration
    normalizes the residual by its clipped local energy, detects atoms whose
    normalized correlation reaches the threshold and updates their amplitudes
    according to ``cfg.amplitude_mode``.
    """
    if cfg.amplitude_mode is AmplitudeMode.SUPPORT_ONLY:
        return rfnSupportDetect(y, dictionary, cfg)

    y = _checkData(y, dictionary)
    if cfg.amplitude_mode is AmplitudeMode.RESIDUAL_APPROX:
        _requireSignature(dictionary)
    if np.any(dictionary.atom_norms == 0):
        raise InvalidParameterError("Dictionary has zero norm atoms")

    x = np.zeros(dictionary.n_atoms)
    first = x
    residual_norms: List[float] = []
    converged = False
    rank_deficient = False
    theta = 0

    for theta in range(1, cfg.max_iters + 1):
        residual = y - dictionary.apply(x)
        residual_norms.append(float(np.linalg.norm(residual)))
        beta = cfg.betaAt(theta)
        indicator, _ = _detect(
            residual, dictionary, cfg.kernel, cfg.tauAt(theta), beta, cfg.peak_only
        )

        if cfg.amplitude_mode is AmplitudeMode.LEAST_SQUARES:
            delta, deficient = _lstsqOnSupport(
                residual, dictionary, np.flatnonzero(indicator)
            )
            rank_deficient |= deficient
        elif cfg.amplitude_mode is AmplitudeMode.PROJECTION_APPROX:
            delta = indicator * dictionary.adjoint(residual) / dictionary.atom_norms ** 2
        else:
            delta = indicator * _centerSamples(residual, dictionary)

        updated = x + cfg.stepAt(theta) * delta
        change = float(np.linalg.norm(updated - x))
        x = updated
        if theta == 1:
            first = x.copy()

        _logger.log(
            TRACE,
            "Iteration %d: beta=%.4g, detected=%d, residual=%.4g, change=%.4g",
            theta,
            beta,
            int(indicator.sum()),
            residual_norms[-1],
            change,
        )
        if change < cfg.stop_tol:
            converged = True
            break

    return SolverRun(
        x=x,
        support=x != 0,
        iterations_used=theta,
        residual_norms=residual_norms,
        converged=converged,
        first_iter_x=first,
        rank_deficient=rank_deficient,
    )


def _supportAmplitudes(
    q: np.ndarray, y: np.ndarray, dictionary: ConvDictionary, center_shift: bool
) -> np.ndarray:
    support = q >= SUPPORT_LEVEL
    if center_shift:
        return np.where(support, _centerSamples(y, dictionary), 0.0)
    # Literal element wise product with the first n_x data samples
    return np.where(support, y[: dictionary.n_x], 0.0)


def rfnSupportDetect(y, dictionary: ConvDictionary, cfg: SolverConfig) -> SolverRun:
    """
    Support detection variant: the data is normalized once, an indicator is
    accumulated over the iterations and the final support (indicator >= 0.5)
    picks its amplitudes from the data. ``cfg.center_shift`` reads them at the
    atom centers instead of the literal sample index.
    """
    y = _checkData(y, dictionary)
    _requireSignature(dictionary)

    normalized = normalize(y, clipEnergy(localEnergy(y, cfg.kernel).sigma, cfg.tauAt(1)))
    weights = 1.0 / dictionary.atom_norms

    q = np.zeros(dictionary.n_atoms)
    first = q
    residual_norms: List[float] = []
    converged = False
    theta = 0

    for theta in range(1, cfg.max_iters + 1):
        residual = normalized - dictionary.apply(q)
        residual_norms.append(float(np.linalg.norm(residual)))
        score = weights * dictionary.adjoint(residual)
        indicator = thresholdIndicator(score, cfg.betaAt(theta))
        if cfg.peak_only:
            indicator = _keepPeaks(indicator, score, dictionary.n_x)

        updated = q + cfg.stepAt(theta) * indicator
        change = float(np.linalg.norm(updated - q))
        q = updated
        if theta == 1:
            first = _supportAmplitudes(q, y, dictionary, cfg.center_shift)

        _logger.log(
            TRACE,
            "Iteration %d: detected=%d, change=%.4g",
            theta,
            int(indicator.sum()),
            change,
        )
        if change < cfg.stop_tol:
            converged = True
            break

    support = q >= SUPPORT_LEVEL
    return SolverRun(
        x=_supportAmplitudes(q, y, dictionary, cfg.center_shift),
        support=support,
        iterations_used=theta,
        residual_norms=residual_norms,
        converged=converged,
        first_iter_x=first,
    )


def istaCost(y, dictionary: ConvDictionary, x, lam: float) -> float:
    "0.5 ||y - Dx||^2 + lambda ||x||_1"
    residual = y - dictionary.apply(x)
    return float(0.5 * residual @ residual + lam * np.abs(x).sum())


def ista(
    y,
    dictionary: ConvDictionary,
    lam: float,
    c: Optional[float] = None,
    max_iters: int = 10000,
    stop_tol: float = 1e-4,
    norm_sq: Optional[float] = None,
) -> SolverRun:
    """
    Iterative shrinkage thresholding,
    x <- S_{lam/c}((1/c) D^T (y - Dx) + x). ``norm_sq`` lets callers reuse a
    spectral norm estimate across traces.
    """
    y = _checkData(y, dictionary)
    if not lam > 0:
        raise InvalidParameterError(f"lambda must be positive, got {lam}")
    if max_iters < 1:
        raise InvalidParameterError(f"max_iters must be >= 1, got {max_iters}")
    if norm_sq is None:
        norm_sq = spectralNormSq(dictionary)
    if c is None:
        c = ISTA_C_MARGIN * norm_sq
    if c < norm_sq * (1 - 1e-6):
        raise InvalidParameterError(
            f"c={c} is below the largest eigenvalue {norm_sq} of D^T D"
        )

    x = np.zeros(dictionary.n_atoms)
    first = x
    residual_norms: List[float] = []
    costs = [istaCost(y, dictionary, x, lam)]
    converged = False
    theta = 0

    for theta in range(1, max_iters + 1):
        residual = y - dictionary.apply(x)
        residual_norms.append(float(np.linalg.norm(residual)))
        updated = softThreshold(dictionary.adjoint(residual) / c + x, lam / c)
        change = float(np.linalg.norm(updated - x))
        x = updated
        if theta == 1:
            first = x.copy()

        costs.append(istaCost(y, dictionary, x, lam))
        if costs[-1] > costs[-2] * (1 + 1e-12) + 1e-12:
            _logger.warning(
                "ISTA cost increased at iteration %d: %g -> %g",
                theta,
                costs[-2],
                costs[-1],
            )
        if change < stop_tol:
            converged = True
            break

    _logger.debug("ISTA stopped after %d iterations (converged=%s)", theta, converged)
    return SolverRun(
        x=x,
        support=x != 0,
        iterations_used=theta,
        residual_norms=residual_norms,
        converged=converged,
        first_iter_x=first,
        costs=costs,
    )


def unrolledForward(
    y,
    layers: Sequence[UnrolledLayer],
    kernel: RfnKernel,
    taus: Sequence[float] = (0.4,),
) -> SolverRun:
    """
    Fixed parameter unrolled RFN-ITA. Layer t computes the residual with the
    previous layer's dictionary, soft thresholds the normalized correlation
    with its own dictionary (no atom norm division) and adds
    alpha * (score * residual at the atom centers).
    """
    if not layers:
        raise InvalidParameterError("At least one layer is required")
    taus = tuple(taus)
    if not taus or any(not t > 0 for t in taus):
        raise InvalidParameterError(f"Clip levels must be > 0, got {taus}")
    reference = layers[0].dictionary
    for index, layer in enumerate(layers):
        current = layer.dictionary
        if (current.n_x, current.n_y, current.n_atoms) != (
            reference.n_x,
            reference.n_y,
            reference.n_atoms,
        ):
            raise InvalidParameterError(f"Layer {index} dimensions do not match layer 0")
        _requireSignature(current)
        if not layer.beta >= 0:
            raise InvalidParameterError(f"Layer {index} threshold must be >= 0")
    y = _checkData(y, reference)

    x = np.zeros(reference.n_atoms)
    first = x
    residual_norms: List[float] = []
    previous = reference

    for index, layer in enumerate(layers):
        residual = y - previous.apply(x)
        residual_norms.append(float(np.linalg.norm(residual)))
        tau = taus[min(index, len(taus) - 1)]
        field_ = clipEnergy(localEnergy(residual, kernel).sigma, tau)
        score = softThreshold(layer.dictionary.adjoint(normalize(residual, field_)), layer.beta)
        x = x + layer.alpha * score * _centerSamples(residual, layer.dictionary)
        if index == 0:
            first = x.copy()
        previous = layer.dictionary

    return SolverRun(
        x=x,
        support=x != 0,
        iterations_used=len(layers),
        residual_norms=residual_norms,
        converged=True,
        first_iter_x=first,
    )


def solveImage(
    y_image,
    dictionary: ConvDictionary,
    cfg: Union[SolverConfig, IstaConfig, None],
    solver=SolverName.RFN_ITA,
    threads: int = 1,
    layers: Optional[Sequence[UnrolledLayer]] = None,
) -> ImageRun:
    """
    Solves every column of ``y_image`` independently. Columns may run on a
    thread pool, results are always returned in column order and failed
    columns are left at zero with their error in ``statuses``.
    """
    solver = parseEnum(SolverName, solver)
    y_image = np.asarray(y_image, dtype=float)
    if y_image.ndim == 1:
        y_image = y_image[:, np.newaxis]
    if y_image.ndim != 2 or y_image.shape[0] != dictionary.n_y:
        raise InvalidParameterError(
            f"Image must have {dictionary.n_y} rows, got shape {y_image.shape}"
        )

    if solver is SolverName.ISTA:
        if not isinstance(cfg, IstaConfig):
            raise InvalidParameterError("ISTA needs an IstaConfig")
        norm_sq = spectralNormSq(dictionary)
        c = ISTA_C_MARGIN * norm_sq if cfg.c is None else cfg.c
        lam = cfg.beta * c

        def solve(column):
            return ista(column, dictionary, lam, c, cfg.max_iters, cfg.stop_tol, norm_sq)

    elif solver is SolverName.UNROLLED:
        if not layers:
            raise InvalidParameterError("The unrolled solver needs layer parameters")
        if layers[0].dictionary.n_y != dictionary.n_y:
            raise InvalidParameterError("Layer dictionaries do not match the image")

        if not isinstance(cfg, SolverConfig):
            raise InvalidParameterError("The unrolled solver needs a SolverConfig")

        def solve(column):
            return unrolledForward(column, layers, cfg.kernel, cfg.taus)

    else:
        if not isinstance(cfg, SolverConfig):
            raise InvalidParameterError(f"{solver.value} needs a SolverConfig")
        func = rfnSupportDetect if solver is SolverName.SUPPORT_DETECT else rfnIta

        def solve(column):
            return func(column, dictionary, cfg)

    def solveColumn(index: int):
        try:
            return solve(y_image[:, index]), "ok"
        except RfnCscError as exc:
            _logger.error("Trace %d failed: %s", index, exc)
            return None, f"error: {exc}"

    n_columns = y_image.shape[1]
    if threads > 1 and n_columns > 1:
        pool = ThreadPool(threads)
        try:
            results = pool.map(solveColumn, range(n_columns))
        finally:
            pool.close()
            pool.join()
    else:
        results = [solveColumn(index) for index in range(n_columns)]

    x_hat = np.zeros((dictionary.n_atoms, n_columns))
    x_first = np.zeros((dictionary.n_atoms, n_columns))
    runs: List[Optional[SolverRun]] = []
    statuses: List[str] = []
    for index, (run, status) in enumerate(results):
        runs.append(run)
        statuses.append(status)
        if run is not None:
            x_hat[:, index] = run.x
            x_first[:, index] = run.first_iter_x

    image_run = ImageRun(x_hat=x_hat, x_first=x_first, runs=runs, statuses=statuses)
    _logger.info(
        "Solved %d traces with %s, mean iterations %s",
        n_columns,
        solver.value,
        image_run.mean_iterations,
    )
    return image_run