# pylint: disable=missing-docstring

import logging
import math

import numpy as np
import pytest

from rfncsc.common import AmplitudeMode, InvalidParameterError, SolverName
from rfncsc.dictionary import buildDictionary, makeRicker
from rfncsc.metrics import applyImage, corrImages
from rfncsc.solvers import IstaConfig, solveImage
from rfncsc.synthgen import (
    TABLE1_PROTOCOL,
    TABLE2_PROTOCOL,
    NoiseSpec,
    ReflectivityModel,
    Table1Row,
    genReflectivity,
    genTraces,
    protocolSolverConfig,
    realizedSnr,
    runFreqSweep,
    runQModelBench,
    runTable1,
    runTable2,
    sweepSolverConfig,
)

# Reference scores of the five protocol rows
TABLE1_EXPECTED_RHO = (0.995, 0.97, 0.89, 0.985, 0.9)
TABLE1_EXPECTED_RHO_FIRST = (0.97, 0.92, 0.81, 0.93, 0.83)
TABLE1_EXPECTED_M_IT = (2.58, 2.64, 3.6, 2.19, 2.38)


@pytest.fixture(name="dictionary")
def fixtureDictionary():
    return buildDictionary([makeRicker(80 * math.pi)], 60)


def test_reflectivity_shape_and_tiny_rate():
    x = genReflectivity(ReflectivityModel(p=1e-6, seed=0, n_channels=100))
    assert x.shape == (60, 100)
    assert np.count_nonzero(x) <= 2


def test_spike_rate_without_separation():
    model = ReflectivityModel(p=0.2, seed=3, n_channels=500)
    x = genReflectivity(model)
    draws = x.size
    expected = draws * model.p
    sigma = math.sqrt(draws * model.p * (1 - model.p))
    assert abs(np.count_nonzero(x) - expected) < 4 * sigma


def test_minimal_separation_is_enforced():
    x = genReflectivity(ReflectivityModel(p=0.4, seed=1, delta_k=5, n_channels=200))
    assert np.count_nonzero(x) > 0
    for column in x.T:
        assert np.all(np.diff(np.flatnonzero(column)) >= 5)


def test_amplitude_statistics():
    x = genReflectivity(ReflectivityModel(p=0.5, seed=4, sigma_r=3.0, n_channels=500))
    amplitudes = x[x != 0]
    assert abs(amplitudes.mean()) < 0.15
    assert amplitudes.std() == pytest.approx(3.0, abs=0.15)


def test_reflectivity_is_deterministic_and_thread_independent():
    model = ReflectivityModel(p=0.3, seed=42, delta_k=3, n_channels=64)
    first = genReflectivity(model)
    np.testing.assert_array_equal(first, genReflectivity(model))
    np.testing.assert_array_equal(first, genReflectivity(model, threads=4))
    other = genReflectivity(ReflectivityModel(p=0.3, seed=43, delta_k=3, n_channels=64))
    assert not np.array_equal(first, other)


def test_channels_do_not_depend_on_channel_count():
    small = genReflectivity(ReflectivityModel(p=0.3, seed=7, n_channels=3))
    large = genReflectivity(ReflectivityModel(p=0.3, seed=7, n_channels=10))
    np.testing.assert_array_equal(small, large[:, :3])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"p": 0.0},
        {"p": 1.0},
        {"p": 0.2, "sigma_r": 0},
        {"p": 0.2, "delta_k": 0},
        {"p": 0.2, "n_channels": 0},
        {"p": 0.2, "n_x": 0},
    ],
)
def test_invalid_models(kwargs):
    with pytest.raises(InvalidParameterError):
        ReflectivityModel(seed=0, **kwargs)


def test_dense_separated_model_warns(caplog):
    with caplog.at_level(logging.WARNING):
        ReflectivityModel(p=0.5, seed=0, delta_k=3)
    assert "p * delta_k" in caplog.text


def test_noise_free_traces(dictionary):
    x = genReflectivity(ReflectivityModel(p=0.2, seed=0, n_channels=4))
    y = genTraces(x, dictionary)
    assert y.shape == (dictionary.n_y, 4)
    np.testing.assert_array_equal(y, applyImage(dictionary, x))
    assert genTraces(x[:, 0], dictionary).shape == (dictionary.n_y, 1)


def test_traces_hit_the_requested_snr(dictionary):
    x = genReflectivity(ReflectivityModel(p=0.2, seed=0, n_channels=20))
    clean = genTraces(x, dictionary)
    noisy = genTraces(x, dictionary, NoiseSpec(40.0, seed=5))
    assert realizedSnr(clean, noisy) == pytest.approx(40.0, abs=1e-6)
    np.testing.assert_array_equal(noisy, genTraces(x, dictionary, NoiseSpec(40.0, seed=5)))
    assert realizedSnr(clean, clean) == math.inf


def test_all_zero_reflectivity_gets_no_noise(dictionary, caplog):
    with caplog.at_level(logging.WARNING):
        y = genTraces(np.zeros((60, 3)), dictionary, NoiseSpec(10.0, seed=1))
    assert not y.any()
    assert "all zero" in caplog.text


def test_traces_check_reflectivity_rows(dictionary):
    with pytest.raises(InvalidParameterError):
        genTraces(np.zeros((59, 3)), dictionary)


def test_protocol_separations():
    assert [row.delta_k for row in TABLE1_PROTOCOL] == [5, 3, 1, 8, 5]
    assert [row.delta_k for row in TABLE2_PROTOCOL] == [5, 3, 1, 8, 5]


def test_protocol_solver_configs():
    row = TABLE1_PROTOCOL[0]
    cfg = protocolSolverConfig(row)
    assert cfg.betas == (0.95, 0.88)
    assert len(cfg.kernel) == 11
    assert cfg.kernel.sigma_h == 2
    assert cfg.step == 0.5
    assert cfg.first_step == 1.0
    assert cfg.max_iters == 4
    assert cfg.betaAt(3) == pytest.approx(0.44)
    assert protocolSolverConfig(row, "projection").amplitude_mode is AmplitudeMode.PROJECTION_APPROX

    assert sweepSolverConfig(25).betas == pytest.approx((1.22, 1.42))
    assert sweepSolverConfig(50).betas == pytest.approx((0.97, 1.17))


def test_unreachable_threshold_scores_zero():
    row = Table1Row(80 * math.pi, 5, math.inf, math.inf, 11, 2, 0.2)
    (result,) = runTable1([row], seed=0, n_channels=5)
    assert result.all_zero
    assert result.rho == 0.0
    assert result.rho_first == 0.0
    assert result.m_it == 1
    assert len(result.toRow()) == 9


def test_table1_rows_are_reproducible():
    rows = TABLE1_PROTOCOL[:1]
    first = runTable1(rows, seed=3, n_channels=6)
    pooled = runTable1(rows, seed=3, n_channels=6, threads=3)
    assert first[0].rho == pooled[0].rho
    assert first[0].rho_first == pooled[0].rho_first
    assert 1 <= first[0].m_it <= 4


def test_table2_support_scores():
    results = runTable2(TABLE2_PROTOCOL[:2], seed=0, n_channels=10)
    assert len(results) == 2
    for result in results:
        assert 0.0 <= result.rho_support <= 1.0
        assert len(result.toRow()) == 5


def test_sweep_needs_two_frequencies():
    with pytest.raises(InvalidParameterError):
        runFreqSweep([25], n_channels=2)


@pytest.mark.slow
def test_table1_rows_within_tolerance():
    results = runTable1(seed=1, n_channels=1000, threads=4)
    assert len(results) == len(TABLE1_PROTOCOL)
    for index, result in enumerate(results):
        assert not result.all_zero
        assert result.rho == pytest.approx(TABLE1_EXPECTED_RHO[index], abs=0.03), index
        assert result.rho_first == pytest.approx(
            TABLE1_EXPECTED_RHO_FIRST[index], abs=0.04
        ), index
        assert result.m_it == pytest.approx(TABLE1_EXPECTED_M_IT[index], abs=0.7), index


@pytest.mark.slow
def test_table1_runs_stop_early():
    # Well separated rows mostly stop one iteration after the first estimate
    (result,) = runTable1(TABLE1_PROTOCOL[:1], seed=0, n_channels=300)
    assert result.m_it < 3.3
    assert result.rho >= result.rho_first


@pytest.mark.slow
def test_error_drops_with_dominant_frequency():
    sweep = runFreqSweep(seed=0, n_channels=1200, threads=4)
    assert [point.f0 for point in sweep.points] == [25, 30, 35, 40, 45, 50]
    assert sweep.slope == pytest.approx(-3.5, abs=0.5)
    mse = [point.mse for point in sweep.points]
    inversions = sum(1 for low, high in zip(mse, mse[1:]) if high >= low)
    assert inversions <= 1
    assert sweep.points[-1].rho > sweep.points[0].rho


@pytest.mark.slow
def test_q_model_bench():
    results = runQModelBench(seed=0, n_channels=2, n_x=80)
    assert [result.solver for result in results] == [SolverName.RFN_ITA, SolverName.ISTA]
    assert results[0].m_it <= 2
    assert len(results[1].toRow()) == 4


@pytest.mark.slow
def test_ista_needs_far_more_iterations_than_rfn_ita():
    row = TABLE1_PROTOCOL[0]
    dictionary = buildDictionary([makeRicker(row.omega0)], 60)
    x = genReflectivity(
        ReflectivityModel(p=row.p, seed=2, delta_k=row.delta_k, n_channels=100), threads=4
    )
    y = genTraces(x, dictionary)

    rfn = solveImage(y, dictionary, protocolSolverConfig(row), threads=4)
    baseline = solveImage(
        y, dictionary, IstaConfig(beta=0.14, stop_tol=1e-4), SolverName.ISTA, threads=4
    )
    assert baseline.mean_iterations >= 20 * rfn.mean_iterations
    assert corrImages(x, baseline.x_hat) == pytest.approx(corrImages(x, rfn.x_hat), abs=0.05)
