"""
Experiment configuration: a JSON document with the sections dictionary, rfn,
solver, synth and output. Every key is optional except ``synth.seed``;
unknown keys are rejected with their full key path.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, get_type_hints

from rfncsc.common import (
    AmplitudeMode,
    ConfigError,
    DictionaryKind,
    InvalidParameterError,
    KernelShape,
    RfnCscError,
    SolverName,
    parseEnum,
)
from rfncsc.dictionary import (
    ConvDictionary,
    QModelParams,
    Wavelet,
    buildDictionary,
    buildQDictionary,
    makeRicker,
)
from rfncsc.rfn import RfnKernel
from rfncsc.rfn import makeKernel as _makeKernel
from rfncsc.solvers import IstaConfig, SolverConfig, UnrolledLayer
from rfncsc.synthgen import NoiseSpec, ReflectivityModel

_logger = logging.getLogger(__name__)

THREADS_ENV = "RFNCSC_THREADS"

_NUMBER = (int, float)


@dataclass
class DictionarySection:
    kind: str = DictionaryKind.TIME_INVARIANT.value
    omega0: float = 80 * math.pi
    sample_interval: float = 0.004
    half_width: Optional[int] = None
    n_x: int = 60
    # None means Q = infinity (no attenuation)
    q: Optional[float] = None
    out_len: Optional[int] = None


@dataclass
class RfnSection:
    shape: str = KernelShape.GAUSSIAN.value
    length: int = 11
    sigma_h: Optional[float] = 2.0
    samples: Optional[List[float]] = None


@dataclass
class SolverSection:
    name: str = SolverName.RFN_ITA.value
    betas: List[float] = field(default_factory=lambda: [0.95, 0.88])
    beta_decay: float = 0.5
    taus: List[float] = field(default_factory=lambda: [0.4])
    step: float = 0.5
    first_step: float = 1.0
    max_iters: int = 4
    stop_tol: float = 1e-4
    amplitude_mode: str = AmplitudeMode.RESIDUAL_APPROX.value
    peak_only: bool = False
    center_shift: bool = False
    ista_beta: float = 0.14
    ista_c: Optional[float] = None
    ista_max_iters: int = 10000
    ista_stop_tol: float = 1e-4
    layers: Optional[str] = None


@dataclass
class SynthSection:
    seed: int = 0
    p: float = 0.2
    sigma_r: float = 3.0
    mu_r: float = 0.0
    delta_k: int = 5
    n_channels: int = 1000
    # None means noise free traces
    snr_db: Optional[float] = None
    noise_seed: Optional[int] = None


@dataclass
class OutputSection:
    dtype: str = "f32"
    prefix: str = "rfncsc"


_SECTIONS = {
    "dictionary": DictionarySection,
    "rfn": RfnSection,
    "solver": SolverSection,
    "synth": SynthSection,
    "output": OutputSection,
}

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "default": {},
    # Attenuated field data setting
    "field": {
        "dictionary": {"kind": DictionaryKind.TIME_VARIANT_Q.value, "q": 200.0, "n_x": 300},
        "rfn": {"shape": "gaussian", "length": 9, "sigma_h": 2.0},
        "solver": {
            "betas": [1.0, 0.7],
            "taus": [0.4, 1.0],
            "step": 0.3,
            "max_iters": 2,
            "ista_beta": 0.14,
        },
        "synth": {"p": 0.1, "delta_k": 3, "n_channels": 8, "snr_db": 40.0},
    },
}


def _checkValue(value, hint, key: str):
    "Very small runtime check of the annotated field types"
    optional = getattr(hint, "__args__", None) and type(None) in hint.__args__
    if value is None:
        if optional:
            return
        raise ConfigError("Value must not be null", key=key)
    if optional:
        hint = next(arg for arg in hint.__args__ if arg is not type(None))

    origin = getattr(hint, "__origin__", None)
    if origin in (list, List):
        if not isinstance(value, list) or not all(
            isinstance(item, _NUMBER) and not isinstance(item, bool) for item in value
        ):
            raise ConfigError("Expected a list of numbers", key=key)
        return
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, _NUMBER) and not isinstance(value, bool)
    else:
        ok = isinstance(value, hint)
    if not ok:
        raise ConfigError(f"Expected {hint.__name__}, got {type(value).__name__}", key=key)


def _buildSection(cls, data: Any, name: str):
    if not isinstance(data, dict):
        raise ConfigError("Section must be an object", key=name)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("Unknown key", key=f"{name}.{key}")

    hints = get_type_hints(cls)
    for key, value in data.items():
        _checkValue(value, hints[key], f"{name}.{key}")
    return cls(**data)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    result = {name: dict(section) for name, section in base.items()}
    for name, section in override.items():
        if isinstance(section, dict) and isinstance(result.get(name), dict):
            result[name].update(section)
        else:
            result[name] = section
    return result


@dataclass
class ExperimentConfig:
    "Resolved configuration. Use ``fromDict`` or ``loadConfig`` to build one"

    dictionary: DictionarySection
    rfn: RfnSection
    solver: SolverSection
    synth: SynthSection
    output: OutputSection

    @classmethod
    def fromDict(cls, data: Any) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("Configuration must be a JSON object")
        for key in data:
            if key not in _SECTIONS:
                raise ConfigError("Unknown section", key=key)
        synth = data.get("synth", {})
        if not isinstance(synth, dict) or "seed" not in synth:
            raise ConfigError("A seed is mandatory", key="synth.seed")
        sections = {
            name: _buildSection(section_cls, data.get(name, {}), name)
            for name, section_cls in _SECTIONS.items()
        }
        return cls(**sections)

    def toDict(self) -> Dict[str, Any]:
        return asdict(self)

    def makeWavelet(self) -> Wavelet:
        section = self.dictionary
        return makeRicker(section.omega0, section.sample_interval, section.half_width)

    def makeQParams(self) -> QModelParams:
        section = self.dictionary
        q = math.inf if section.q is None else section.q
        return QModelParams(q, section.omega0, section.sample_interval)

    def makeDictionary(self) -> ConvDictionary:
        kind = parseEnum(DictionaryKind, self.dictionary.kind)
        if kind is DictionaryKind.TIME_INVARIANT:
            return buildDictionary([self.makeWavelet()], self.dictionary.n_x)
        return buildQDictionary(
            self.makeWavelet(),
            self.makeQParams(),
            self.dictionary.n_x,
            self.dictionary.out_len,
        )

    def makeKernel(self) -> RfnKernel:
        section = self.rfn
        return _makeKernel(section.shape, section.length, section.sigma_h, section.samples)

    def makeSolverConfig(self) -> SolverConfig:
        section = self.solver
        return SolverConfig(
            kernel=self.makeKernel(),
            betas=tuple(section.betas),
            beta_decay=section.beta_decay,
            taus=tuple(section.taus),
            step=section.step,
            first_step=section.first_step,
            max_iters=section.max_iters,
            stop_tol=section.stop_tol,
            amplitude_mode=section.amplitude_mode,
            peak_only=section.peak_only,
            center_shift=section.center_shift,
        )

    def makeIstaConfig(self) -> IstaConfig:
        section = self.solver
        return IstaConfig(
            beta=section.ista_beta,
            c=section.ista_c,
            max_iters=section.ista_max_iters,
            stop_tol=section.ista_stop_tol,
        )

    def makeReflectivityModel(self) -> ReflectivityModel:
        section = self.synth
        return ReflectivityModel(
            p=section.p,
            seed=section.seed,
            sigma_r=section.sigma_r,
            mu_r=section.mu_r,
            delta_k=section.delta_k,
            n_x=self.dictionary.n_x,
            n_channels=section.n_channels,
        )

    def makeNoiseSpec(self) -> Optional[NoiseSpec]:
        section = self.synth
        if section.snr_db is None:
            return None
        seed = section.seed + 1 if section.noise_seed is None else section.noise_seed
        return NoiseSpec(section.snr_db, seed)

    def makeLayers(self) -> Optional[List[UnrolledLayer]]:
        if self.solver.layers is None:
            return None
        return loadLayers(
            self.solver.layers, self.dictionary.n_x, self.dictionary.sample_interval
        )

    def validate(self) -> "ExperimentConfig":
        "Builds every domain object once so bad values fail early"
        try:
            parseEnum(SolverName, self.solver.name)
            self.makeSolverConfig()
            self.makeIstaConfig()
            self.makeReflectivityModel()
            self.makeQParams()
        except RfnCscError as exc:
            raise ConfigError(str(exc)) from exc
        if self.output.dtype not in ("f32", "f64"):
            raise ConfigError("Must be f32 or f64", key="output.dtype")
        return self


def loadConfig(
    path: Optional[str] = None,
    seed: Optional[int] = None,
    preset: str = "default",
) -> ExperimentConfig:
    """
    Reads a JSON config on top of a preset. ``seed`` (from the command line)
    overrides ``synth.seed``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset, choose from {sorted(PRESETS)}", key=preset)

    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fp:
                text = fp.read()
        except OSError as exc:
            raise ConfigError(f"Unable to read {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno, column=exc.colno) from exc
        if not isinstance(data, dict):
            raise ConfigError("Configuration must be a JSON object")

    merged = _merge(PRESETS[preset], data)
    if seed is not None:
        merged.setdefault("synth", {})
        if not isinstance(merged["synth"], dict):
            raise ConfigError("Section must be an object", key="synth")
        merged["synth"]["seed"] = seed

    config = ExperimentConfig.fromDict(merged).validate()
    _logger.debug("Resolved config: %s", config.toDict())
    return config


def loadLayers(path: str, n_x: int, sample_interval: float = 0.004) -> List[UnrolledLayer]:
    """
    Reads unrolled layer parameters, a JSON list of objects with ``beta``,
    optional ``alpha`` (1.0) and either ``filter`` (explicit samples) or
    ``omega0`` (Ricker wavelet).
    """
    try:
        with open(path, encoding="utf-8") as fp:
            entries = json.load(fp)
    except OSError as exc:
        raise ConfigError(f"Unable to read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, column=exc.colno) from exc

    if not isinstance(entries, list) or not entries:
        raise ConfigError("Layer file must hold a non empty list", key="layers")

    layers = []
    for index, entry in enumerate(entries):
        name = f"layers[{index}]"
        if not isinstance(entry, dict):
            raise ConfigError("Layer must be an object", key=name)
        for key in entry:
            if key not in ("beta", "alpha", "filter", "omega0"):
                raise ConfigError("Unknown key", key=f"{name}.{key}")
        if "beta" not in entry:
            raise ConfigError("Missing threshold", key=f"{name}.beta")
        if ("filter" in entry) == ("omega0" in entry):
            raise ConfigError("Exactly one of filter or omega0 is required", key=name)
        _checkValue(entry["beta"], float, f"{name}.beta")
        _checkValue(entry.get("alpha", 1.0), float, f"{name}.alpha")

        try:
            if "filter" in entry:
                _checkValue(entry["filter"], List[float], f"{name}.filter")
                wavelet = Wavelet(entry["filter"], sample_interval)
            else:
                _checkValue(entry["omega0"], float, f"{name}.omega0")
                wavelet = makeRicker(entry["omega0"], sample_interval)
            layer = UnrolledLayer(
                buildDictionary([wavelet], n_x),
                float(entry["beta"]),
                float(entry.get("alpha", 1.0)),
            )
        except InvalidParameterError as exc:
            raise ConfigError(str(exc), key=name) from exc
        layers.append(layer)

    _logger.info("Loaded %d unrolled layers from %s", len(layers), path)
    return layers


def resolveThreads(threads: Optional[int] = None) -> int:
    "Thread count from the command line, else RFNCSC_THREADS, else 1"
    if threads is None:
        value = os.environ.get(THREADS_ENV)
        if value is None:
            return 1
        try:
            threads = int(value)
        except ValueError:
            raise ConfigError(f"Not an integer: '{value}'", key=THREADS_ENV) from None
    if threads < 1:
        raise ConfigError(f"Thread count must be >= 1, got {threads}", key="threads")
    return threads

