"""Tests for the local-averaging estimators and the bias correction."""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import F2_FLOOR
from src.core import TickSeries, ConfigError, EstimatorError, rv
from src.lama import (
    GridPlan, BiasDiagnostics, build_grid_plan, local_averages, subgrid_power_variations, la_single_grid,
    a_pq, ma_multigrid_rv, uncorrected_estimate, uncorrected_path, block_boundaries, f2_f3_blocks,
    boundary_average_increments, bias_correction, final_estimate,
)


def _linear(n_increments: int, step: float = 1.0) -> TickSeries:
    return TickSeries(np.linspace(0.0, 1.0, n_increments + 1), np.arange(n_increments + 1) * step)


def _noisy_bm(n: int = 4000, sigma: float = 0.02, noise_sd: float = 0.0005, seed: int = 7) -> TickSeries:
    rng = np.random.default_rng(seed)
    x = np.concatenate(([0.0], np.cumsum(rng.normal(0.0, sigma / math.sqrt(n), size=n))))
    return TickSeries(np.linspace(0.0, 1.0, n + 1), math.log(5.0) + x + rng.normal(0.0, noise_sd, size=n + 1))


def _dyadic(n: int = 4000, seed: int = 9) -> TickSeries:
    """Walk on a 2^-12 lattice so doubling is exact."""
    rng = np.random.default_rng(seed)
    prices = np.concatenate(([0.0], np.cumsum(rng.integers(-6, 7, size=n) / 4096.0)))
    prices[1::2] += 1.0 / 4096.0
    return TickSeries(np.linspace(0.0, 1.0, n + 1), prices)


class TestGridPlan(unittest.TestCase):
    """Plan construction and validation."""

    def test_default_ell(self):
        """n = 46800, p = 5, q = 20 gives l = 2339."""
        self.assertEqual(GridPlan(46_800).ell, 2339)

    def test_small_ell(self):
        """l = floor((n - p) / q)."""
        self.assertEqual(GridPlan(n=86, p=5, q=20).ell, 4)

    def test_rejects_q_not_above_p(self):
        """q > p is required except for the degenerate p = q = 1 plan."""
        with self.assertRaises(ConfigError):
            GridPlan(n=100, p=5, q=5)
        self.assertEqual(GridPlan(n=100, p=1, q=1).ell, 99)

    def test_rejects_bad_fields(self):
        """p >= 1, d1 >= 1 and n > p are required."""
        for kwargs in ({"n": 100, "p": 0, "q": 3}, {"n": 100, "d1": 0}, {"n": 5, "p": 5, "q": 20}):
            with self.subTest(**kwargs), self.assertRaises(ConfigError):
                GridPlan(**kwargs)

    def test_subgrid_index(self):
        """t^k_{i,j} sits at observation i q + p - j + k."""
        plan = GridPlan(n=100, p=2, q=3)
        self.assertEqual(plan.subgrid_index(4, k=1, j=1), 14)

    def test_build_uses_observed_count(self):
        """Without an override n is the observed increment count."""
        series = _linear(500)
        self.assertEqual(build_grid_plan(series, p=5, q=20).n, 500)
        self.assertEqual(build_grid_plan(series, p=5, q=20, n_override=46_800).ell, 2339)

    def test_build_rejects_short_series(self):
        """Fewer than p + q increments cannot be planned."""
        with self.assertRaises(ConfigError):
            build_grid_plan(_linear(20), p=5, q=20)

    def test_build_rejects_single_block(self):
        """l = 1 is rejected."""
        with self.assertRaises(ConfigError):
            build_grid_plan(_linear(25), p=5, q=20)

    def test_build_rejects_q_not_above_p(self):
        """build_grid_plan never accepts the degenerate plan."""
        with self.assertRaises(ConfigError):
            build_grid_plan(_linear(100), p=1, q=1)


class TestLocalAverages(unittest.TestCase):
    """Local averages and single-grid measures."""

    def test_hand_averages(self):
        """Prices 0..9 with p = 2, q = 3 average to 1.5, 4.5, 7.5 at t_2, t_5, t_8."""
        series = _linear(9)
        times, values = local_averages(series, GridPlan(n=9, p=2, q=3))
        np.testing.assert_allclose(values, [1.5, 4.5, 7.5])
        np.testing.assert_array_equal(times, series.times[[2, 5, 8]])

    def test_offset_subgrid(self):
        """Sub-grid k shifts every point by k ticks."""
        _, values = local_averages(_linear(9), GridPlan(n=9, p=2, q=3), k=2)
        np.testing.assert_allclose(values, [3.5, 6.5])

    def test_rejects_subgrid_out_of_range(self):
        """k must lie in [0, q-1]."""
        with self.assertRaises(ValueError):
            local_averages(_linear(9), GridPlan(n=9, p=2, q=3), k=3)

    def test_subgrid_power_variations(self):
        """Increments of 3 on l = 2 give rv 18, tricity sqrt(2) 54 and quarticity 324."""
        powers = subgrid_power_variations(_linear(9), GridPlan(n=9, p=2, q=3))
        self.assertAlmostEqual(powers["rv"], 18.0)
        self.assertAlmostEqual(powers["tricity"], math.sqrt(2) * 54.0)
        self.assertAlmostEqual(powers["quarticity"], 324.0)

    def test_la_single_grid(self):
        """[Ybar,Ybar] minus (2 L_1 / p) sigma_eps^2 with L_1 recorded."""
        record = la_single_grid(_linear(9), GridPlan(n=9, p=2, q=3), noise_var=0.5)
        self.assertAlmostEqual(record.value, 17.0)
        self.assertEqual(record.diagnostics["L1"], 2)
        self.assertEqual(record.name, "la")

    def test_la_single_grid_needs_two_points(self):
        """A sub-grid with one local average cannot be differenced."""
        with self.assertRaises(EstimatorError):
            la_single_grid(_linear(4), GridPlan(n=4, p=2, q=3), noise_var=0.0)

    def test_multigrid_rv(self):
        """Every lag-q local-average increment of a unit ramp is 3; five of them over q = 3."""
        self.assertAlmostEqual(ma_multigrid_rv(_linear(9), GridPlan(n=9, p=2, q=3)), 15.0)

    def test_multigrid_rejects_short_series(self):
        """The last sub-grid must reach two local averages."""
        with self.assertRaises(EstimatorError):
            ma_multigrid_rv(_linear(6), GridPlan(n=6, p=2, q=3))


class TestAttenuation(unittest.TestCase):
    """A(p, q) closed form."""

    def test_values(self):
        """A(1, q) = 0, A(2, 2) = -1/4, A(5, 20) = -0.08."""
        self.assertEqual(a_pq(1, 20), 0.0)
        self.assertAlmostEqual(a_pq(2, 2), -0.25)
        self.assertAlmostEqual(a_pq(5, 20), -0.08)

    def test_closed_form(self):
        """A(p, q) = -(p^2 - 1) / (3 p q)."""
        for p, q in ((3, 7), (10, 40), (25, 26)):
            self.assertAlmostEqual(a_pq(p, q), -(p * p - 1) / (3 * p * q), places=12)

    def test_rejects_nonpositive(self):
        """p and q must be positive."""
        with self.assertRaises(ValueError):
            a_pq(0, 3)


class TestUncorrected(unittest.TestCase):
    """Multi-grid estimator with noise and attenuation corrections."""

    def test_collapses_to_rv(self):
        """p = q = 1 without noise correction is RV minus the first squared increment.

        The first sub-grid point is observation p = 1, so increment 0 -> 1 never enters.
        """
        series = _noisy_bm(500)
        record = uncorrected_estimate(series, GridPlan(n=500, p=1, q=1, d1=10), noise_var=0.0)
        expected = rv(TickSeries(series.times[1:], series.prices[1:]))
        self.assertAlmostEqual(record.value / expected, 1.0, places=12)
        first = (series.prices[1] - series.prices[0]) ** 2
        self.assertAlmostEqual((record.value + first) / rv(series), 1.0, places=12)

    def test_records_attenuation_and_noise(self):
        """Diagnostics carry A(p, q) and the noise variance used."""
        series = _noisy_bm()
        record = uncorrected_estimate(series, GridPlan(n=4000), noise_var=1e-7)
        self.assertAlmostEqual(record.diagnostics["a_pq"], -0.08)
        self.assertEqual(record.diagnostics["noise_var"], 1e-7)

    def test_path_at_one_matches_estimate(self):
        """F^(2)_n(1) equals the full-sample uncorrected estimator."""
        series = _noisy_bm()
        plan = GridPlan(n=4000)
        self.assertAlmostEqual(
            uncorrected_path(series, plan, 1.0) / uncorrected_estimate(series, plan).value, 1.0, places=12
        )

    def test_path_grows_with_t(self):
        """Half the day carries roughly half the variance."""
        series = _noisy_bm(23_400, seed=3)
        plan = GridPlan(n=23_400)
        half = uncorrected_path(series, plan, 0.5)
        self.assertAlmostEqual(half / (0.5 * 4e-4), 1.0, delta=0.35)

    def test_accuracy_on_noisy_path(self):
        """One regular noisy path lands within 25% of sigma^2."""
        series = _noisy_bm(23_400, seed=11)
        record = uncorrected_estimate(series, build_grid_plan(series))
        self.assertAlmostEqual(record.value / 4e-4, 1.0, delta=0.25)


class TestBiasCorrection(unittest.TestCase):
    """Blocks, block derivatives and the final estimator."""

    def test_block_boundaries(self):
        """Boundaries every d_1 q ticks; a partial block joins the last one."""
        plan = GridPlan(n=1000, p=5, q=20, d1=10)
        np.testing.assert_array_equal(block_boundaries(1000, plan), [0, 200, 400, 600, 800, 1000])
        np.testing.assert_array_equal(block_boundaries(1050, plan), [0, 200, 400, 600, 800, 1050])

    def test_block_boundaries_need_two_blocks(self):
        """Fewer than two full blocks is an estimator error."""
        with self.assertRaises(EstimatorError):
            block_boundaries(399, GridPlan(n=1000, p=5, q=20, d1=10))

    def test_boundary_average_increments(self):
        """Local averages end p ticks after each boundary, clipped at N_1."""
        series = _linear(600, step=0.001)
        plan = GridPlan(n=600, p=2, q=3, d1=100)
        d_bar = boundary_average_increments(series, plan, block_boundaries(600, plan))
        np.testing.assert_allclose(d_bar, [0.300, 0.298])

    def test_constant_prices_floor_every_block(self):
        """Zero f^(2) is floored in every block and reported."""
        series = TickSeries(np.linspace(0.0, 1.0, 1001), np.full(1001, 1.5))
        plan = GridPlan(n=1000, p=5, q=20, d1=10)
        with self.assertLogs("src.lama", level="WARNING"):
            f2, f3, taus, diag = f2_f3_blocks(series, plan)
        self.assertTrue(np.all(f2 == F2_FLOOR))
        self.assertTrue(np.all(f3 == 0.0))
        self.assertEqual(diag.clamped_blocks, diag.block_count)
        self.assertEqual(len(taus), diag.block_count + 1)
        with self.assertLogs("src.lama", level="WARNING"):
            record = final_estimate(series, plan)
        self.assertEqual(record.value, 0.0)
        self.assertEqual(record.diagnostics["clamped_blocks"], 5)

    def test_block_derivatives_integrate_to_uncorrected(self):
        """Summing f^(2) times block width recovers the uncorrected estimate."""
        series = _noisy_bm()
        plan = GridPlan(n=4000, p=5, q=20, d1=10)
        f2, _, taus, diag = f2_f3_blocks(series, plan)
        self.assertEqual(diag.clamped_blocks, 0)
        total = float(np.dot(f2, np.diff(taus)))
        self.assertAlmostEqual(total / uncorrected_estimate(series, plan).value, 1.0, places=9)

    def test_final_identity(self):
        """final = uncorrected - B / (sqrt(l) (1 + A))."""
        series = _noisy_bm()
        plan = GridPlan(n=4000, p=5, q=20, d1=10)
        final = final_estimate(series, plan)
        bias = final.diagnostics["bias"]
        expected = uncorrected_estimate(series, plan).value - bias / (math.sqrt(plan.ell) * (1 + a_pq(5, 20)))
        self.assertAlmostEqual(final.value, expected, delta=1e-12)
        self.assertEqual(bias, bias_correction(series, plan)[0])

    def test_supplied_bias(self):
        """A supplied B replaces the estimated one."""
        series = _noisy_bm()
        plan = GridPlan(n=4000, p=5, q=20, d1=10)
        base = uncorrected_estimate(series, plan).value
        record = final_estimate(series, plan, bias=0.0)
        self.assertAlmostEqual(record.value, base, delta=1e-15)
        self.assertNotIn("clamped_blocks", record.diagnostics)

    def test_translation_invariance(self):
        """Shifting prices leaves the final estimate unchanged."""
        series = _noisy_bm()
        plan = GridPlan(n=4000, p=5, q=20, d1=10)
        base = final_estimate(series, plan).value
        self.assertAlmostEqual(final_estimate(series.shifted(2.5), plan).value / base, 1.0, places=8)

    def test_scale_covariance(self):
        """Doubling prices multiplies both estimators by 4."""
        series = _dyadic()
        plan = GridPlan(n=4000, p=5, q=20, d1=10)
        for estimator in (uncorrected_estimate, final_estimate):
            with self.subTest(estimator=estimator.__name__):
                base = estimator(series, plan).value
                self.assertAlmostEqual(estimator(series.scaled(2.0), plan).value / (4.0 * base), 1.0, places=12)

    def test_diagnostics_range(self):
        """clamped_blocks outside [0, block_count] is rejected."""
        with self.assertRaises(ValueError):
            BiasDiagnostics(3, 4, np.zeros(3), np.zeros(3))

    def test_accuracy_on_noisy_path(self):
        """With regular times the correction is small and the estimate lands within 25%."""
        series = _noisy_bm(23_400, seed=11)
        record = final_estimate(series, build_grid_plan(series))
        self.assertAlmostEqual(record.value / 4e-4, 1.0, delta=0.25)


if __name__ == "__main__":
    unittest.main()
