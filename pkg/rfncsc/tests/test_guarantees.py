# pylint: disable=missing-docstring

import json
import math

import numpy as np
import pytest

from rfncsc.common import InvalidParameterError, KernelShapeError, Theorem
from rfncsc.dictionary import buildDictionary, makeRicker
from rfncsc.guarantees import (
    FirstIterationMargin,
    GuaranteeReport,
    checkTheorem1,
    checkTheorem2,
    checkTheorem3,
    firstIterationMargin,
    noiseStripeNorm,
    separatedCoherence,
    separationConstant,
    minimalGap,
    separationSamples,
    sripBounds,
    stripeStats,
    suggestTau,
    theorem1Bounds,
)
from rfncsc.rfn import makeKernel

OMEGA0 = 80 * math.pi
TS = 0.004


@pytest.fixture(name="dictionary")
def fixtureDictionary():
    return buildDictionary([makeRicker(OMEGA0)], 150)


def _separatedCode(rng, n_x, gap):
    "Random signs, log uniform magnitudes in [1e-3, 1], spikes at least gap apart"
    x = np.zeros(n_x)
    index = int(rng.integers(0, gap))
    while index < n_x:
        x[index] = rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-3, 0)
        index += gap + int(rng.integers(0, 10))
    return x


@pytest.mark.parametrize("delta_k", range(1, 11))
def test_separation_constant_round_trip(delta_k):
    nu = separationConstant(delta_k, OMEGA0, TS)
    assert separationSamples(nu, OMEGA0, TS) == delta_k


def test_separation_samples_rounds_up():
    # omega0 * T_s = 0.32 pi ~ 1.005
    assert separationSamples(1.0, OMEGA0, TS) == 1
    assert separationSamples(1.1, OMEGA0, TS) == 2
    assert separationSamples(5.0, OMEGA0, TS) == 5
    with pytest.raises(InvalidParameterError):
        separationSamples(0, OMEGA0, TS)


def test_stripe_stats():
    x = np.zeros(40)
    x[10] = 1.0
    x[12] = -2.0
    x[30] = 3.0
    stats = stripeStats(x, kernel_length=3, filter_length=5)
    assert stats.stripe_length == 7
    assert stats.s == 2
    np.testing.assert_array_equal(stats.support, [10, 12, 30])
    np.testing.assert_array_equal(stats.x_min_i, [1, 1, 3])
    np.testing.assert_array_equal(stats.x_max_i, [2, 2, 3])
    np.testing.assert_array_equal(stats.x_minus_i, [2, 1, 0])
    assert stats.x_min == 1.0
    assert stats.x_max == 3.0


def test_stripe_stats_reach_past_the_stripe():
    # 5 shifts apart: outside the 7 shift stripe, inside twice its reach
    x = np.zeros(40)
    x[10] = 1.0
    x[15] = 0.5
    stats = stripeStats(x, kernel_length=3, filter_length=5)
    assert stats.s == 2
    np.testing.assert_array_equal(stats.x_min_i, [1.0, 0.5])
    np.testing.assert_array_equal(stats.x_max_i, [1.0, 0.5])
    np.testing.assert_array_equal(stats.x_minus_i, [0.5, 1.0])

    x[20] = 2.0
    stats = stripeStats(x, kernel_length=3, filter_length=5)
    np.testing.assert_array_equal(stats.x_minus_i, [0.5, 3.0, 0.5])


def test_minimal_gap():
    x = np.zeros(20)
    assert minimalGap(x) is None
    x[[2, 9, 12]] = 1.0
    assert minimalGap(x) == 3
    # Spikes of different filters never count as neighbors
    assert minimalGap(x, n_filters=2) == 7


def test_stripe_stats_of_empty_code():
    stats = stripeStats(np.zeros(10), 3, 5)
    assert stats.s == 0
    assert stats.support.size == 0
    assert stats.x_min == 0.0


def test_srip_envelope_contains_pair_energies(dictionary):
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = np.zeros(dictionary.n_atoms)
        first = int(rng.integers(0, dictionary.n_x - 15))
        x[[first, first + int(rng.integers(1, 15))]] = rng.normal(size=2)
        low, high = sripBounds(dictionary, x)
        energy = float(np.sum(dictionary.apply(x) ** 2))
        assert low - 1e-12 <= energy <= high + 1e-12


def test_srip_single_spike_is_exact(dictionary):
    x = np.zeros(dictionary.n_atoms)
    x[40] = 2.0
    low, high = sripBounds(dictionary, x)
    assert low == high == pytest.approx(float(np.sum(dictionary.apply(x) ** 2)))


def test_theorem1_plug_in_values():
    result = theorem1Bounds(1, 0.3, [1.0], [1.0])
    assert result["reason"] is None
    assert result["lhs"] == 1.0
    assert result["rhs"] == pytest.approx(0.6 / 1.3)
    assert result["low"] == pytest.approx(0.3)
    assert result["high"] == pytest.approx(1.0)


def test_theorem1_plug_in_fails_for_two_equal_spikes():
    result = theorem1Bounds(2, 0.3, [1.0, 1.0], [1.0, 1.0])
    assert result["lhs"] == 1.0
    assert result["rhs"] == pytest.approx(1.2417, abs=1e-3)
    assert result["lhs"] < result["rhs"]


def test_theorem1_plug_in_vacuous_cases():
    assert theorem1Bounds(5, 0.3, [1.0], [1.0])["reason"] == "sRIP denominator nonpositive"
    result = theorem1Bounds(1, 0.3, [0.5], [0.5], eps_d=1.0)
    assert result["reason"] == "noise level exceeds the smallest amplitude"
    assert result["lhs"] is None


def test_theorem1_holds_for_separated_spikes(dictionary):
    rng = np.random.default_rng(1)
    kernel = makeKernel("rectangular", dictionary.filter_length)
    for _ in range(100):
        x = _separatedCode(rng, dictionary.n_x, 29)
        report = checkTheorem1(x, dictionary, kernel, tau=1e-6)
        assert report.theorem is Theorem.T1
        assert report.condition_holds
        low, high = report.beta1_interval
        assert low == pytest.approx(dictionary.mutual_coherence)
        assert high == pytest.approx(1.0)
        beta = low + 0.9 * (high - low)
        margin = firstIterationMargin(x, dictionary, kernel, 1e-6)
        assert margin.off_support_max < beta <= margin.on_support_min


def test_theorem2_holds_for_separated_spikes(dictionary):
    rng = np.random.default_rng(2)
    kernel = makeKernel("gaussian", 11, 2.0)
    for _ in range(500):
        x = _separatedCode(rng, dictionary.n_x, 25)
        report = checkTheorem2(x, dictionary, len(kernel))
        assert report.condition_holds
        assert report.beta1_interval == (dictionary.mutual_coherence, 1.0)
        margin = firstIterationMargin(x, dictionary, kernel, 1e-6)
        assert margin.off_support_max < 0.95 <= margin.on_support_min


def test_theorem2_fails_for_dense_code(dictionary):
    x = np.zeros(dictionary.n_atoms)
    x[[10, 12]] = 1.0
    report = checkTheorem2(x, dictionary)
    assert not report.condition_holds
    assert report.reason == "stripe sparsity is 2"
    assert report.beta1_interval is None

    report = checkTheorem2(np.zeros(dictionary.n_atoms), dictionary)
    assert report.reason == "empty code"


def test_theorem3_holds_for_separated_spikes(dictionary):
    rng = np.random.default_rng(3)
    kernel = makeKernel("gaussian", dictionary.filter_length, 6.0)
    for _ in range(100):
        x = _separatedCode(rng, dictionary.n_x, 29)
        report = checkTheorem3(x, dictionary, kernel, nu=5.0, omega0=OMEGA0)
        assert report.condition_holds
        assert report.inputs["delta_k"] == 5
        assert report.lhs == pytest.approx(0.886, abs=0.02)
        assert report.rhs == pytest.approx(1.0)
        beta = 0.5 * (report.lhs + report.rhs)
        margin = firstIterationMargin(x, dictionary, kernel, 1e-6)
        assert margin.off_support_max < beta <= margin.on_support_min


def test_theorem3_weak_neighbor_past_the_stripe_fails(dictionary):
    # A faint spike one stripe away from a strong one, nearly flat window
    kernel = makeKernel("gaussian", dictionary.filter_length, 20.0)
    x = np.zeros(dictionary.n_atoms)
    x[80] = 1.0
    x[95] = 0.01
    report = checkTheorem3(x, dictionary, kernel, nu=0.5, omega0=OMEGA0)
    assert report.inputs["delta_k"] == 1
    assert report.inputs["s"] == 2
    assert not report.condition_holds
    assert report.beta1_interval is None
    assert report.rhs < report.lhs
    assert report.reason is None


def test_theorem3_fails_below_the_minimal_separation(dictionary):
    kernel = makeKernel("gaussian", dictionary.filter_length, 6.0)
    x = np.zeros(dictionary.n_atoms)
    x[40] = 1.0
    x[43] = 1.0
    x[100] = -0.5
    report = checkTheorem3(x, dictionary, kernel, nu=5.0, omega0=OMEGA0)
    assert not report.condition_holds
    assert report.beta1_interval is None
    assert report.inputs["min_gap"] == 3
    assert "minimal separation of 5" in report.reason


def test_theorem3_is_never_optimistic():
    # Dense and sparse codes alike: whenever the condition holds, the
    # midpoint threshold must split the observed first iteration scores
    dictionary = buildDictionary([makeRicker(OMEGA0)], 150)
    kernel = makeKernel("gaussian", dictionary.filter_length, 6.0)
    rng = np.random.default_rng(13)
    dense = 0
    held = 0
    for trial in range(200):
        gap = 5 if trial % 2 else 29
        x = _separatedCode(rng, dictionary.n_x, gap)
        report = checkTheorem3(x, dictionary, kernel, nu=5.0, omega0=OMEGA0)
        if report.inputs["s"] >= 2:
            dense += 1
        if not report.condition_holds:
            continue
        held += 1
        beta = 0.5 * (report.lhs + report.rhs)
        margin = firstIterationMargin(x, dictionary, kernel, 1e-6)
        assert margin.off_support_max < beta <= margin.on_support_min
    assert dense >= 50
    assert held >= 50


def test_kernel_shape_requirements(dictionary):
    x = np.zeros(dictionary.n_atoms)
    x[20] = 1.0
    gaussian = makeKernel("gaussian", dictionary.filter_length, 6.0)
    rectangular = makeKernel("rectangular", dictionary.filter_length)
    with pytest.raises(KernelShapeError):
        checkTheorem1(x, dictionary, gaussian)
    with pytest.raises(KernelShapeError):
        checkTheorem3(x, dictionary, rectangular, 5.0, OMEGA0)
    with pytest.raises(InvalidParameterError):
        checkTheorem1(x, dictionary, makeKernel("rectangular", 9))
    with pytest.raises(InvalidParameterError):
        checkTheorem3(x, dictionary, makeKernel("gaussian", 9, 2.0), 5.0, OMEGA0)
    with pytest.raises(InvalidParameterError):
        checkTheorem1(x, dictionary, rectangular, eps_d=-1)


def test_empty_code_is_reported(dictionary):
    kernel = makeKernel("rectangular", dictionary.filter_length)
    report = checkTheorem1(np.zeros(dictionary.n_atoms), dictionary, kernel)
    assert not report.condition_holds
    assert report.reason == "empty code"


def test_separated_coherence(dictionary):
    assert separatedCoherence(dictionary, 1) == pytest.approx(dictionary.mutual_coherence)
    values = [separatedCoherence(dictionary, k) for k in range(1, 16)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0
    with pytest.raises(InvalidParameterError):
        separatedCoherence(dictionary, 0)


def test_first_iteration_margin_separable():
    assert FirstIterationMargin(1.0, 0.5).separable
    assert not FirstIterationMargin(0.5, 0.5).separable
    assert not FirstIterationMargin(None, 0.5).separable
    assert FirstIterationMargin(1.0, None).separable


def test_suggest_tau(dictionary):
    norm = dictionary.atom_norms.min()
    assert suggestTau(0.5, dictionary) == pytest.approx(0.5 * norm)
    assert suggestTau(0.5, dictionary, 0.1) == pytest.approx(0.5 * norm + 0.1)
    with pytest.raises(InvalidParameterError):
        suggestTau(-1, dictionary)


def test_noise_stripe_norm():
    assert noiseStripeNorm(0.1, 9) == pytest.approx(0.3)


def test_report_to_dict_is_json_safe():
    report = GuaranteeReport(
        Theorem.T2, False, 1.0, math.inf, None, {"mu": np.float64(0.5), "s": np.int64(3)}
    )
    result = report.toDict()
    assert result["theorem"] == 2
    assert result["rhs"] == "inf"
    assert result["inputs"] == {"mu": 0.5, "s": 3}
    json.dumps(result)
