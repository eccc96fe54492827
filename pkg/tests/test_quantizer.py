import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fxquant._step_table import STEP_TABLE
from fxquant.quantizer import (
    DegenerateStatsError,
    Distribution,
    QFormat,
    TensorStats,
    UndefinedSqnrError,
    derive_qformat,
    measure_sqnr,
    optimal_step_size,
    predict_sqnr_db,
    quantize,
    uniform_quantize,
)

DISTS = [d.value for d in Distribution]


class TestOptimalStepSize:
    def test_published_values(self):
        assert optimal_step_size("gaussian", 2) == 0.996
        assert optimal_step_size(Distribution.UNIFORM, 1) == 1.0
        assert optimal_step_size("laplacian", 4) == 0.456
        assert optimal_step_size("gamma", 3) == 0.796

    @pytest.mark.parametrize("bits", [0, 17, -1])
    def test_range(self, bits):
        with pytest.raises(ValueError):
            optimal_step_size("gaussian", bits)

    @pytest.mark.parametrize("dist", DISTS)
    def test_monotone_decreasing(self, dist):
        steps = [optimal_step_size(dist, b) for b in range(1, 17)]
        assert all(a > b for a, b in zip(steps, steps[1:]))

    @pytest.mark.parametrize("dist", DISTS)
    def test_generated_table_agrees_with_published(self, dist):
        for bits in range(1, 5):
            assert STEP_TABLE[dist][bits - 1] == pytest.approx(optimal_step_size(dist, bits), rel=0.012)

    def test_uniform_extension_is_exact(self):
        for bits in range(5, 17):
            assert optimal_step_size("uniform", bits) == 2.0 ** (1 - bits)

    @pytest.mark.slow
    def test_gaussian_six_bits_matches_monte_carlo(self):
        scanned = oracles.mc_optimal_step("gaussian", 6, n=10_000_000, seed=6)
        assert optimal_step_size("gaussian", 6) == pytest.approx(scanned, rel=0.01)

    @pytest.mark.parametrize("dist", ["gaussian", "laplacian", "gamma"])
    @pytest.mark.parametrize("bits", [5, 6, 8])
    def test_extended_steps_minimize_empirical_mse(self, dist, bits):
        x = oracles.sample_normalized(dist, 1_000_000, np.random.default_rng(bits))
        step = optimal_step_size(dist, bits)
        at_table = oracles.midrise_mse(x, step, bits)
        for factor in (0.9, 1.1):
            assert at_table <= oracles.midrise_mse(x, step * factor, bits)


class TestDeriveQFormat:
    def test_examples(self):
        unit = TensorStats(1000, 0.0, 1.0, 4.0)
        assert derive_qformat(unit, 2, "gaussian", 1.0) == QFormat(2, 0)
        # s = 3 * 0.335 = 1.005 -> n = -1
        assert derive_qformat(unit, 4, "gaussian", 3.0) == QFormat(4, -1)
        half = TensorStats(1000, 0.0, 0.5, 2.0)
        # s = 0.5 * 1.596 = 0.798 -> n = -ceil(-0.3256) = 0
        assert derive_qformat(half, 1, "gaussian", 1.0).frac_bits == 0

    def test_default_xi_is_three_sigma(self):
        assert derive_qformat(TensorStats(10, 0.0, 1.0, 3.0), 4) == QFormat(4, -1)

    def test_uniform_uses_max_abs(self):
        st_ = TensorStats(10, 0.0, 0.1, 1.0)
        assert derive_qformat(st_, 4, "uniform").frac_bits == 3
        assert derive_qformat(st_, 4, "uniform", xi_multiplier=100.0).frac_bits == 3

    def test_degenerate(self):
        with pytest.raises(DegenerateStatsError):
            derive_qformat(TensorStats(5, 2.0, 0.0, 2.0), 8)
        with pytest.raises(DegenerateStatsError):
            derive_qformat(TensorStats(5, 0.0, 0.0, 0.0), 8, "uniform")

    def test_wide_formats_beyond_table(self):
        unit = TensorStats(10, 0.0, 1.0, 4.0)
        f16 = derive_qformat(unit, 16)
        assert derive_qformat(unit, 24).frac_bits == f16.frac_bits + 8


class TestQuantize:
    def test_zero(self):
        for fmt in (QFormat(2, 0), QFormat(8, 5), QFormat(16, -3)):
            assert quantize([0.0], fmt)[0] == 0.0

    def test_examples(self):
        np.testing.assert_array_equal(quantize([0.3, -0.3], QFormat(8, 2)), [0.25, -0.25])
        np.testing.assert_array_equal(quantize([100.0], QFormat(4, 0)), [7.0])
        np.testing.assert_array_equal(quantize([-100.0], QFormat(4, 0)), [-8.0])

    def test_ties_away_from_zero(self):
        np.testing.assert_array_equal(quantize([0.5, -0.5, 1.5, -2.5], QFormat(8, 0)), [1.0, -1.0, 2.0, -3.0])

    def test_matches_exhaustive_level_search(self):
        rng = np.random.default_rng(3)
        for bits, frac in [(3, 1), (4, 0), (5, -2), (6, 4)]:
            fmt = QFormat(bits, frac)
            lo, hi = fmt.code_range
            values = np.concatenate([rng.normal(0, 2.0 ** (bits - frac - 2), 300), np.arange(lo, hi + 1) * fmt.step / 2])
            expected = [oracles.brute_quantize(v, fmt.step, lo, hi) for v in values]
            np.testing.assert_array_equal(quantize(values, fmt), expected)

    def test_one_bit_is_symmetric(self):
        np.testing.assert_array_equal(quantize([-3.0, -0.1, 0.2, 9.0], QFormat(1, 0)), [-0.5, -0.5, 0.5, 0.5])

    def test_unsigned(self):
        np.testing.assert_array_equal(quantize([-1.0, 0.4, 300.0], QFormat(8, 0, signed=False)), [0.0, 0.0, 255.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize([1.0, np.nan], QFormat(8, 0))
        with pytest.raises(ValueError):
            quantize([np.inf], QFormat(8, 0))

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50),
        st.integers(1, 32),
        st.integers(-20, 40),
    )
    def test_idempotent(self, values, bits, frac):
        fmt = QFormat(bits, frac)
        once = quantize(values, fmt)
        np.testing.assert_array_equal(quantize(once, fmt), once)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=50), st.integers(2, 24), st.integers(-8, 20))
    def test_bounded_error_inside_range(self, values, bits, frac):
        fmt = QFormat(bits, frac)
        x = np.array(values)
        inside = (x >= fmt.min_value) & (x <= fmt.max_value)
        err = np.abs(x - quantize(x, fmt))[inside]
        assert np.all(err <= fmt.step / 2)


class TestQFormat:
    def test_text_round_trip(self):
        for fmt in (QFormat(8, 5), QFormat(4, -1), QFormat(16, 0, signed=False)):
            assert QFormat.parse(str(fmt)) == fmt
        assert str(QFormat(4, -1)) == "Q4.-1"

    def test_bounds(self):
        fmt = QFormat(4, 0)
        assert (fmt.min_value, fmt.max_value) == (-8.0, 7.0)
        with pytest.raises(ValueError):
            QFormat(0, 0)
        with pytest.raises(ValueError):
            QFormat(33, 0)


class TestStats:
    def test_constant_tensor(self):
        s = TensorStats.from_values(np.full(10, -2.5))
        assert (s.std_dev, s.mean, s.max_abs) == (0.0, -2.5, 2.5)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40),
        st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40),
    )
    def test_merge_matches_concatenation(self, a, b):
        merged = TensorStats.from_values(a).merge(TensorStats.from_values(b))
        direct = TensorStats.from_values(a + b)
        assert merged.count == direct.count
        assert merged.mean == pytest.approx(direct.mean, rel=1e-9, abs=1e-9)
        assert merged.std_dev == pytest.approx(direct.std_dev, rel=1e-9, abs=1e-7)
        assert merged.max_abs == direct.max_abs


class TestSqnr:
    def test_identical_is_infinite(self):
        assert measure_sqnr([1, 1, 1, 1], [1, 1, 1, 1]) == math.inf

    def test_arithmetic(self):
        assert measure_sqnr([1, 0, -1, 0], [0.9, 0, -0.9, 0]) == pytest.approx(20.0, abs=1e-9)

    def test_errors(self):
        with pytest.raises(UndefinedSqnrError):
            measure_sqnr([0, 0], [1, 1])
        with pytest.raises(ValueError):
            measure_sqnr([1, 2], [1])

    def test_table_step_near_monte_carlo_optimum(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(1_000_000)
        got = measure_sqnr(x, uniform_quantize(x, optimal_step_size("gaussian", 4), 4))
        best = oracles.mc_optimal_step("gaussian", 4, n=1_000_000, seed=12)
        ref = oracles.sqnr_db(x, uniform_quantize(x, best, 4))
        assert abs(got - ref) <= 0.5

    def test_predict(self):
        assert predict_sqnr_db(10, 3.0) == 30.0
        assert predict_sqnr_db(1, 6.02) == pytest.approx(6.02)
        assert predict_sqnr_db(4, 5.0) == 20.0
        with pytest.raises(ValueError):
            predict_sqnr_db(0, 3.0)

    def test_monotone_in_bits(self):
        x = np.random.default_rng(5).standard_normal(200_000)
        stats = TensorStats.from_values(x)
        values = [measure_sqnr(x, quantize(x, derive_qformat(stats, b, "gaussian", 1.0))) for b in range(2, 13)]
        assert all(b >= a for a, b in zip(values, values[1:]))
