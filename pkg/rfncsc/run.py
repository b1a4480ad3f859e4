"""
Command implementations. ``Runner`` holds the resolved configuration and the
thread count and exposes one method per command line verb.
"""

import csv
import json
import logging
import math
import os
import os.path as p
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from rfncsc.common import (
    DictionaryKind,
    InvalidParameterError,
    KernelShape,
    OutputError,
    SolverName,
    Theorem,
    formatTable,
    parseEnum,
)
from rfncsc.config import ExperimentConfig
from rfncsc.dictionary import ConvDictionary, QModelParams, buildQDictionary
from rfncsc.guarantees import (
    GuaranteeReport,
    checkTheorem1,
    checkTheorem2,
    checkTheorem3,
    firstIterationMargin,
    separatedCoherence,
    separationConstant,
    suggestTau,
)
from rfncsc.metrics import scoreRun
from rfncsc.rfn import makeKernel
from rfncsc.solvers import spectralNormSq, solveImage
from rfncsc.synthgen import (
    QMODEL_HEADERS,
    SWEEP_HEADERS,
    TABLE1_HEADERS,
    TABLE2_HEADERS,
    genReflectivity,
    genTraces,
    realizedSnr,
    runFreqSweep,
    runQModelBench,
    runTable1,
    runTable2,
)
from rfncsc.trace_file import readTraceMatrix, writeTraceMatrix

_logger = logging.getLogger(__name__)

BENCH_SUITES = ("table1", "freqsweep", "table2", "qmodel")


def _checkOutput(path: str):
    "Fails before any work when the directory of ``path`` cannot take files"
    directory = p.dirname(p.abspath(path))
    if not p.isdir(directory):
        raise OutputError(f"Output directory {directory} does not exist")
    if not os.access(directory, os.W_OK | os.X_OK):
        raise OutputError(f"Output directory {directory} is not writable")


def _writeJson(path: str, data: Any):
    try:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(data, fp, indent=2)
            fp.write("\n")
    except OSError as exc:
        raise OutputError(f"Failed to write {path}: {exc}") from exc


def _writeCsv(path: str, headers: Sequence[str], rows: List[list], footer=None):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(headers)
            writer.writerows(rows)
            if footer is not None:
                writer.writerow(footer)
    except OSError as exc:
        raise OutputError(f"Failed to write {path}: {exc}") from exc


def _finite(value: Optional[float]) -> Any:
    if value is None or math.isfinite(value):
        return value
    return str(value)


class Runner:
    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = threads
        self._dictionary: Optional[ConvDictionary] = None

    @property
    def dictionary(self) -> ConvDictionary:
        if self._dictionary is None:
            _logger.debug("Building dictionary from %s", self.config.dictionary)
            self._dictionary = self.config.makeDictionary()
        return self._dictionary

    def _write(self, path: str, matrix):
        writeTraceMatrix(
            path,
            matrix,
            self.config.dictionary.sample_interval,
            self.config.output.dtype,
        )

    def cmdSynth(self, out: str) -> Dict[str, str]:
        """
        Generates a reflectivity image and its traces, writes both as trace
        matrix files next to a manifest echoing the resolved config
        """
        _checkOutput(out)
        model = self.config.makeReflectivityModel()
        noise = self.config.makeNoiseSpec()
        x = genReflectivity(model, self.threads)
        y = genTraces(x, self.dictionary, noise)

        paths = {
            "x": f"{out}_x.rtm",
            "y": f"{out}_y.rtm",
            "manifest": f"{out}_manifest.json",
        }
        self._write(paths["x"], x)
        self._write(paths["y"], y)

        manifest = {
            "command": "synth",
            "config": self.config.toDict(),
            "files": {key: p.basename(value) for key, value in paths.items()},
            "x_shape": list(x.shape),
            "y_shape": list(y.shape),
            "spikes": int(np.count_nonzero(x)),
        }
        if noise is not None:
            manifest["realized_snr_db"] = _finite(realizedSnr(genTraces(x, self.dictionary), y))
        _writeJson(paths["manifest"], manifest)

        _logger.info("Wrote %s", ", ".join(paths.values()))
        return paths

    def _loadDictionary(self, dict_path: Optional[str]) -> ConvDictionary:
        if dict_path is None:
            return self.dictionary
        matrix, sample_interval = readTraceMatrix(dict_path)
        return ConvDictionary.fromMatrix(matrix, sample_interval)

    def cmdSolve(
        self,
        y_path: str,
        out: str,
        solver: Optional[str] = None,
        x_path: Optional[str] = None,
        dict_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """
        Solves every trace of the image in ``y_path``, writes the estimate to
        ``<out>_xhat.rtm`` and a summary to ``<out>_summary.json``. Scores are
        included when the true reflectivity ``x_path`` is given.
        """
        _checkOutput(out)
        name = parseEnum(SolverName, solver or self.config.solver.name)
        y, _ = readTraceMatrix(y_path)
        dictionary = self._loadDictionary(dict_path)

        if name is SolverName.ISTA:
            cfg: Any = self.config.makeIstaConfig()
        else:
            cfg = self.config.makeSolverConfig()
        layers = self.config.makeLayers() if name is SolverName.UNROLLED else None

        image_run = solveImage(y, dictionary, cfg, name, self.threads, layers)

        summary: Dict[str, Any] = {
            "solver": name.value,
            "iterations": [run.iterations_used if run else None for run in image_run.runs],
            "residual_norms": [
                run.residual_norms[-1] if run and run.residual_norms else None
                for run in image_run.runs
            ],
            "converged": [run.converged if run else None for run in image_run.runs],
            "statuses": image_run.statuses,
            "mean_iterations": image_run.mean_iterations,
            "scores": None,
        }
        if x_path is not None:
            x, _ = readTraceMatrix(x_path)
            if x.shape != image_run.x_hat.shape:
                raise InvalidParameterError(
                    f"True reflectivity has shape {x.shape}, expected {image_run.x_hat.shape}"
                )
            summary["scores"] = scoreRun(x, image_run, y, dictionary).toDict()

        self._write(f"{out}_xhat.rtm", image_run.x_hat)
        _writeJson(f"{out}_summary.json", summary)
        return summary

    def cmdBench(self, suite: str, out: str, channels: Optional[int] = None) -> List[list]:
        "Runs an experiment suite and writes its rows as CSV"
        _checkOutput(out)
        seed = self.config.synth.seed
        kwargs: Dict[str, Any] = {"seed": seed, "threads": self.threads}
        if channels is not None:
            kwargs["n_channels"] = channels

        footer = None
        if suite == "table1":
            headers = TABLE1_HEADERS
            rows = [result.toRow() for result in runTable1(**kwargs)]
        elif suite == "freqsweep":
            headers = SWEEP_HEADERS
            sweep = runFreqSweep(**kwargs)
            rows = [[point.f0, point.mse, point.rho] for point in sweep.points]
            footer = ["slope", sweep.slope]
        elif suite == "table2":
            headers = TABLE2_HEADERS
            rows = [result.toRow() for result in runTable2(**kwargs)]
        elif suite == "qmodel":
            headers = QMODEL_HEADERS
            section = self.config.dictionary
            results = runQModelBench(
                q=200.0 if section.q is None else section.q,
                omega0=section.omega0,
                n_x=section.n_x,
                rfn_cfg=self.config.makeSolverConfig(),
                ista_cfg=self.config.makeIstaConfig(),
                **kwargs,
            )
            rows = [result.toRow() for result in results]
        else:
            raise InvalidParameterError(
                f"Unknown suite '{suite}', valid suites are: {', '.join(BENCH_SUITES)}"
            )

        _writeCsv(out, headers, rows, footer)
        print(formatTable(rows, headers))
        return rows

    def _checkKernel(self, theorem: Theorem, filter_length: int):
        section = self.config.rfn
        if theorem is Theorem.T1:
            return makeKernel(KernelShape.RECTANGULAR, filter_length)
        if theorem is Theorem.T3:
            return makeKernel(section.shape, filter_length, section.sigma_h)
        return self.config.makeKernel()

    def cmdCheck(
        self,
        x_path: str,
        theorem,
        out: Optional[str] = None,
        column: int = 0,
        eps_d: float = 0.0,
        tau: Optional[float] = None,
        nu: Optional[float] = None,
    ) -> GuaranteeReport:
        """
        Evaluates a recovery condition on one column of the image in
        ``x_path``. Theorem 1 uses a rectangular window and theorem 3 the
        configured window shape, both stretched to the filter length.
        """
        if out is not None:
            _checkOutput(out)
        theorem = Theorem(int(theorem)) if not isinstance(theorem, Theorem) else theorem
        x_image, _ = readTraceMatrix(x_path)
        if not 0 <= column < x_image.shape[1]:
            raise InvalidParameterError(
                f"Column {column} out of range for {x_image.shape[1]} columns"
            )
        x = x_image[:, column]
        dictionary = self.dictionary
        kernel = self._checkKernel(theorem, dictionary.filter_length)
        tau = self.config.solver.taus[0] if tau is None else tau
        omega0 = self.config.dictionary.omega0
        if nu is None:
            nu = separationConstant(
                self.config.synth.delta_k, omega0, dictionary.sample_interval
            )

        if theorem is Theorem.T1:
            report = checkTheorem1(x, dictionary, kernel, eps_d, tau)
        elif theorem is Theorem.T2:
            report = checkTheorem2(x, dictionary, len(kernel))
        else:
            report = checkTheorem3(x, dictionary, kernel, nu, omega0)

        margin = firstIterationMargin(x, dictionary, kernel, tau)
        report.diagnostics["first_iteration"] = {
            "on_support_min": margin.on_support_min,
            "off_support_max": margin.off_support_max,
            "separable": margin.separable,
        }
        report.diagnostics["separated_coherence"] = separatedCoherence(
            dictionary, self.config.synth.delta_k
        )
        nonzero = np.abs(x[x != 0])
        if nonzero.size:
            report.diagnostics["suggested_tau"] = suggestTau(
                float(nonzero.min()), dictionary, eps_d
            )

        result = report.toDict()
        result["column"] = column
        if out is not None:
            _writeJson(out, result)
        print(json.dumps(result, indent=2))
        _logger.info(
            "Theorem %d condition %s", theorem.value, "holds" if report.condition_holds else "fails"
        )
        return report

    def cmdQdict(self, out: str, q: Optional[float] = None, n_x: Optional[int] = None) -> str:
        """
        Builds a time variant Q dictionary for the configured source wavelet
        and writes it as a dense trace matrix. q=None means no attenuation.
        """
        _checkOutput(out)
        section = self.config.dictionary
        if q is None:
            q = math.inf if section.q is None else section.q
        n_x = section.n_x if n_x is None else n_x
        params = QModelParams(q, section.omega0, section.sample_interval)

        dictionary = buildQDictionary(self.config.makeWavelet(), params, n_x, section.out_len)
        self._write(out, dictionary.toDense())
        _logger.info("Wrote %dx%d dictionary to %s", dictionary.n_y, dictionary.n_x, out)
        return out

    def info(self) -> str:
        "Text table describing the configured dictionary"
        dictionary = self.dictionary
        norms = dictionary.atom_norms
        rows: List[list] = [
            ["kind", dictionary.kind.value],
            ["filters (m)", dictionary.n_filters],
            ["L_x", dictionary.n_x],
            ["L_d", dictionary.filter_length],
            ["L_y", dictionary.n_y],
            ["mutual coherence", dictionary.mutual_coherence],
            ["separated coherence", separatedCoherence(dictionary, self.config.synth.delta_k)],
            ["||D||_2^2", spectralNormSq(dictionary)],
            ["truncated", dictionary.truncated],
        ]
        if dictionary.kind is DictionaryKind.TIME_INVARIANT:
            rows.insert(4, ["atom norm", float(norms[0])])
        else:
            rows.insert(4, ["first column norm", float(norms[0])])
            rows.insert(5, ["last column norm", float(norms[-1])])
            if dictionary.q_params is not None:
                rows.append(["Q", dictionary.q_params.q])
                rows.append(["gamma", dictionary.q_params.gamma])

        text = formatTable(rows, ["property", "value"])
        print(text)
        return text
