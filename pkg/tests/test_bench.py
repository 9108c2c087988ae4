"""Tests for the Monte Carlo harness and distribution summaries."""

import math
import os
import sys
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import ESTIMATOR_NAMES
from src.core import DataError, ConfigError, EstimatorError
from src.simulate import Design, DesignConfig, simulate_design_path
from src.lama import GridPlan
from src.bench import (
    ESTIMATORS, TABLE_LABELS, PathResult, BenchmarkReport, evaluate_estimators, evaluate_path,
    aggregate, run_design, distribution_summary, distribution_report,
)

SLOW = os.environ.get("LAMA_SLOW_TESTS") == "1"


def _config(design=Design.BB_POISSON, **kwargs) -> DesignConfig:
    kwargs.setdefault("n", 2000)
    kwargs.setdefault("fine_factor", 4)
    kwargs.setdefault("poisson_rate", 2000.0)
    return DesignConfig(design=design, **kwargs)


def _plan(n: int = 2000) -> GridPlan:
    return GridPlan(n=n, p=5, q=20, d1=10)


def _result(index: int, estimate, truth: float = 4e-4) -> PathResult:
    return PathResult(
        path_index=index, noise_seed=index, true_iv=truth, n_increments=100,
        estimates={"final": estimate},
    )


class TestEvaluateEstimators(unittest.TestCase):
    """One series through every estimator."""

    def setUp(self):
        _, self.series, _ = simulate_design_path(_config(), 7, 0)

    def test_all_six_estimators(self):
        """Every estimator returns a record on a well-sized series."""
        records, errors = evaluate_estimators(self.series, _plan())
        self.assertEqual(errors, {})
        self.assertEqual(list(records), list(ESTIMATOR_NAMES))
        self.assertEqual(set(TABLE_LABELS), set(ESTIMATORS))

    def test_failure_is_isolated(self):
        """A failing estimator is reported while the others still run."""
        def broken(series, plan, **kw):
            raise EstimatorError("tsrv", "boom")

        with mock.patch.dict(ESTIMATORS, {"tsrv": broken}):
            with self.assertLogs("src.bench", level="WARNING"):
                records, errors = evaluate_estimators(self.series, _plan())
        self.assertNotIn("tsrv", records)
        self.assertIn("boom", errors["tsrv"])
        self.assertIn("final", records)

    def test_options_reach_estimator(self):
        """Per-estimator options are forwarded."""
        plain, _ = evaluate_estimators(self.series, _plan(), names=("msrv",))
        noise_t2, _ = evaluate_estimators(self.series, _plan(), names=("msrv",), options={"msrv": {"sparse_t2": False}})
        self.assertLess(plain["msrv"].tuning["K"], noise_t2["msrv"].tuning["K"])

    def test_path_result_pairs_estimates_with_truth(self):
        """evaluate_path records the noise seed, truth and all estimates of one path."""
        result = evaluate_path(_config(), _plan(), 7, 0)
        _, series, info = simulate_design_path(_config(), 7, 0)
        self.assertEqual(result.noise_seed, info["noise_seed"])
        self.assertEqual(result.n_increments, series.n_increments)
        self.assertAlmostEqual(result.true_iv, 4e-4)
        self.assertTrue(all(v is not None for v in result.estimates.values()))
        self.assertIsNotNone(result.clamped_blocks)


class TestAggregate(unittest.TestCase):
    """Per-estimator error statistics."""

    def test_single_path(self):
        """One path: rmse = |e|, bias = e, no s.d."""
        row = aggregate([_result(0, 3.5e-4)], "final", constant_truth=True)
        self.assertAlmostEqual(row.rmse, 5e-5)
        self.assertAlmostEqual(row.bias, -5e-5)
        self.assertIsNone(row.sd)
        self.assertEqual(row.valid, 1)

    def test_failures_excluded(self):
        """Missing estimates are counted and left out."""
        results = [_result(0, 4.1e-4), _result(1, None), _result(2, 3.9e-4)]
        row = aggregate(results, "final", constant_truth=True)
        self.assertEqual((row.valid, row.failed), (2, 1))
        self.assertAlmostEqual(row.bias, 0.0)
        self.assertAlmostEqual(row.sd, math.sqrt(2) * 1e-5)

    def test_all_failed_is_invalid(self):
        """No valid estimate marks the row invalid."""
        row = aggregate([_result(0, None)], "final", constant_truth=True)
        self.assertTrue(row.invalid)
        self.assertTrue(math.isnan(row.rmse))

    def test_path_dependent_truth_has_no_sd(self):
        """s.d. is omitted when the truth varies by path."""
        results = [_result(0, 4.1e-4, 4.2e-4), _result(1, 3.9e-4, 3.7e-4)]
        self.assertIsNone(aggregate(results, "final", constant_truth=False).sd)


class TestRunDesign(unittest.TestCase):
    """Whole-design runs on small paths."""

    def test_rejects_zero_paths(self):
        """At least one path is required."""
        with self.assertRaises(ConfigError):
            run_design(_config(), _plan(), 0, 1, workers=1)

    def test_deterministic(self):
        """Identical seeds give identical per-path estimates."""
        first = run_design(_config(), _plan(), 3, 42, workers=1)
        second = run_design(_config(), _plan(), 3, 42, workers=1)
        self.assertEqual([r.estimates for r in first.path_results], [r.estimates for r in second.path_results])
        self.assertEqual([r.noise_seed for r in first.path_results], [r.noise_seed for r in second.path_results])

    def test_worker_count_does_not_change_results(self):
        """Parallel runs reproduce the serial run in path order."""
        serial = run_design(_config(), _plan(), 4, 5, workers=1, names=("tsrv", "final"))
        parallel = run_design(_config(), _plan(), 4, 5, workers=2, names=("tsrv", "final"))
        self.assertEqual([r.path_index for r in parallel.path_results], [0, 1, 2, 3])
        self.assertEqual([r.estimates for r in serial.path_results], [r.estimates for r in parallel.path_results])

    def test_rmse_decomposition(self):
        """rmse^2 = bias^2 + var(estimates) for constant truth, and rmse >= |bias|."""
        report = run_design(_config(), _plan(), 6, 3, workers=1)
        for row in report.rows:
            with self.subTest(estimator=row.name):
                est = report.estimates(row.name)
                self.assertEqual(len(est), row.valid)
                lhs = row.rmse ** 2
                rhs = row.bias ** 2 + float(np.var(est, ddof=0))
                self.assertAlmostEqual(lhs / rhs, 1.0, places=10)
                self.assertGreaterEqual(row.rmse, abs(row.bias))
                self.assertAlmostEqual(row.sd, float(np.std(est, ddof=1)))

    def test_heston_omits_sd(self):
        """Path-dependent truth leaves s.d. out of every row."""
        report = run_design(_config(Design.HESTON_HIT), _plan(), 2, 9, workers=1, names=("uncorrected", "final"))
        self.assertTrue(all(row.sd is None for row in report.rows))
        truths = [r.true_iv for r in report.path_results]
        self.assertNotEqual(truths[0], truths[1])

    def test_estimator_failing_everywhere(self):
        """An estimator failing on every path yields an invalid row; the others are unaffected."""
        def broken(series, plan, **kw):
            raise EstimatorError("kernel", "no bandwidth")

        with mock.patch.dict(ESTIMATORS, {"kernel": broken}), self.assertLogs("src.bench", level="WARNING"):
            report = run_design(_config(), _plan(), 2, 1, workers=1)
        self.assertTrue(report.row("kernel").invalid)
        self.assertEqual(report.row("kernel").failed, 2)
        self.assertFalse(report.row("final").invalid)
        self.assertIn("no bandwidth", report.path_results[0].errors["kernel"])

    def test_simulation_failure_counted(self):
        """Paths that fail to simulate are counted and skipped."""
        with mock.patch("src.bench.simulate_design_path", side_effect=DataError("bad path")):
            with self.assertLogs("src.bench", level="WARNING"):
                report = run_design(_config(), _plan(), 3, 1, workers=1)
        self.assertEqual(report.path_failures, 3)
        self.assertEqual(report.path_results, [])
        self.assertTrue(all(row.invalid for row in report.rows))

    def test_report_metadata(self):
        """Design, plan and config are carried on the report."""
        report = run_design(_config(), _plan(), 1, 2, workers=1, names=("final",))
        self.assertEqual(report.design, "bb-poisson")
        self.assertEqual(report.plan["ell"], _plan().ell)
        self.assertEqual(report.config["n"], 2000)
        with self.assertRaises(KeyError):
            report.row("tsrv")


class TestDistribution(unittest.TestCase):
    """Standardized sampling distributions."""

    def test_normal_moments(self):
        """Exact-normal draws have near-zero skewness and excess kurtosis."""
        m = 2000
        values = np.random.default_rng(17).normal(4e-4, 1.5e-5, size=m)
        dist = distribution_summary(values, "final")
        self.assertLess(abs(dist.skewness), 4 * math.sqrt(6 / m))
        self.assertLess(abs(dist.excess_kurtosis), 4 * math.sqrt(24 / m))
        self.assertEqual(int(dist.counts.sum()), m)
        self.assertEqual(len(dist.bin_edges), 31)
        self.assertTrue(np.all(np.diff(dist.qq_empirical) >= 0.0))
        self.assertAlmostEqual(float(np.mean(dist.qq_empirical)), 0.0, places=12)

    def test_qq_pairs_track_diagonal(self):
        """Normal QQ pairs lie near the diagonal."""
        values = np.random.default_rng(3).normal(size=1000)
        dist = distribution_summary(values)
        middle = slice(100, 900)
        np.testing.assert_allclose(dist.qq_empirical[middle], dist.qq_theoretical[middle], atol=0.2)

    def test_too_few_values(self):
        """Fewer than 30 values are rejected."""
        with self.assertRaises(DataError):
            distribution_summary(np.arange(29, dtype=float))

    def test_constant_values(self):
        """Zero spread cannot be standardized."""
        with self.assertRaises(DataError):
            distribution_summary(np.full(50, 4e-4))

    def test_from_report_skips_failures(self):
        """Only valid estimates of the named estimator enter the summary."""
        rng = np.random.default_rng(8)
        results = [_result(i, float(v)) for i, v in enumerate(rng.normal(4e-4, 1e-5, size=40))]
        results.append(_result(40, None))
        report = BenchmarkReport(
            design="bb-hit", paths=41, master_seed=1, rows=[], path_results=results,
            wall_time=0.0, config={}, plan={},
        )
        self.assertEqual(distribution_report(report, "final").count, 40)


BASELINES = ("tsrv", "msrv", "kernel", "preavg", "uncorrected")

# Reference RMSE and bias of the full-size designs, 1,000 paths each
REFERENCE = {
    Design.BB_HIT: {
        "rmse": {"tsrv": 3.734e-5, "msrv": 3.553e-5, "kernel": 3.810e-5, "preavg": 3.340e-5,
                 "uncorrected": 3.300e-5, "final": 1.621e-5},
        "bias": {"tsrv": 3.300e-5, "msrv": 3.163e-5, "kernel": 3.454e-5, "preavg": 2.927e-5,
                 "uncorrected": 2.911e-5, "final": -4.997e-6},
    },
    Design.HESTON_HIT: {
        "rmse": {"tsrv": 3.824e-5, "msrv": 3.579e-5, "kernel": 3.835e-5, "preavg": 3.387e-5,
                 "uncorrected": 3.375e-5, "final": 1.636e-5},
        "bias": {"tsrv": 3.393e-5, "msrv": 3.175e-5, "kernel": 3.463e-5, "preavg": 2.965e-5,
                 "uncorrected": 2.974e-5, "final": -4.215e-6},
    },
    Design.BB_POISSON: {
        "rmse": {"tsrv": 1.486e-5, "msrv": 1.375e-5, "kernel": 1.434e-5, "preavg": 1.373e-5,
                 "uncorrected": 1.312e-5, "final": 1.568e-5},
    },
}


class _FullDesign:
    """Runs one full-size design once per class at the default tuning."""

    design: Design
    PATHS = 1_000

    @classmethod
    def setUpClass(cls):
        config = DesignConfig(design=cls.design)
        cls.report = run_design(config, GridPlan(n=config.n), cls.PATHS, 2024)
        cls.reference = REFERENCE[cls.design]

    def assertRelative(self, actual, expected, tolerance=0.25):
        self.assertAlmostEqual(actual / expected, 1.0, delta=tolerance, msg=f"{actual:.4e} vs {expected:.4e}")

    def test_every_row_valid(self):
        """No estimator fails on every path and rmse >= |bias| throughout."""
        for row in self.report.rows:
            with self.subTest(estimator=row.name):
                self.assertFalse(row.invalid)
                self.assertGreaterEqual(row.rmse, abs(row.bias))

    def test_baseline_rmse(self):
        """Every competitor RMSE lands within 25% of its reference value."""
        for name in BASELINES:
            with self.subTest(estimator=name):
                self.assertRelative(self.report.row(name).rmse, self.reference["rmse"][name])


class _HittingOrdering:
    """Ordering of the final estimator against the competitors on hitting designs."""

    def test_final_beats_every_baseline(self):
        """Final RMSE is below every competitor RMSE."""
        final = self.report.row("final").rmse
        for name in BASELINES:
            with self.subTest(estimator=name):
                self.assertLess(final, self.report.row(name).rmse)

    def test_final_bias_reduction(self):
        """|final bias| is below a fifth of the smallest competitor |bias|."""
        smallest = min(abs(self.report.row(name).bias) for name in BASELINES)
        self.assertLess(abs(self.report.row("final").bias), 0.2 * smallest)

    def test_final_row(self):
        """Final RMSE within 25% and bias within 5e-6 of the reference."""
        row = self.report.row("final")
        self.assertRelative(row.rmse, self.reference["rmse"]["final"])
        self.assertAlmostEqual(row.bias, self.reference["bias"]["final"], delta=5e-6)


@unittest.skipUnless(SLOW, "set LAMA_SLOW_TESTS=1 to run Monte Carlo checks")
class TestBrownianHittingDesign(_FullDesign, _HittingOrdering, unittest.TestCase):
    """Brownian bridge with hitting times."""

    design = Design.BB_HIT

    def test_final_sd(self):
        """Final s.d. within 25% of 1.543e-5."""
        self.assertRelative(self.report.row("final").sd, 1.543e-5)

    def test_final_distribution_is_near_normal(self):
        """Standardized final estimates have |skewness| < 0.25 and |excess kurtosis| < 0.6."""
        dist = distribution_report(self.report, "final")
        self.assertEqual(dist.count, self.report.row("final").valid)
        self.assertLess(abs(dist.skewness), 0.25)
        self.assertLess(abs(dist.excess_kurtosis), 0.6)


@unittest.skipUnless(SLOW, "set LAMA_SLOW_TESTS=1 to run Monte Carlo checks")
class TestHestonHittingDesign(_FullDesign, _HittingOrdering, unittest.TestCase):
    """Heston bridge with hitting times; truth varies by path."""

    design = Design.HESTON_HIT

    def test_sd_omitted(self):
        """Rows carry no s.d. for path-dependent truth."""
        self.assertTrue(all(row.sd is None for row in self.report.rows))


@unittest.skipUnless(SLOW, "set LAMA_SLOW_TESTS=1 to run Monte Carlo checks")
class TestPoissonDesign(_FullDesign, unittest.TestCase):
    """Brownian bridge with Poisson times, where every estimator is consistent."""

    design = Design.BB_POISSON

    def test_final_comparable_to_baselines(self):
        """Final RMSE within 25% of 1.568e-5 and within 35% of the best competitor."""
        final = self.report.row("final").rmse
        self.assertRelative(final, self.reference["rmse"]["final"])
        best = min(self.report.row(name).rmse for name in BASELINES)
        self.assertLess(final, 1.35 * best)

    def test_preaveraging_bias_envelope(self):
        """Pre-averaging bias stays inside 3e-6 plus a quarter of its RMSE."""
        self.assertLess(abs(self.report.row("preavg").bias), 3e-6 + 0.25 * 1.373e-5)


@unittest.skipUnless(SLOW, "set LAMA_SLOW_TESTS=1 to run Monte Carlo checks")
class TestConvergenceRate(unittest.TestCase):
    """Cross-path spread of the uncorrected estimator under hitting times."""

    def test_doubling_n_shrinks_spread(self):
        """Doubling n shrinks the s.d. by a factor between 1.2 and 1.6."""
        spreads = []
        for n in (46_800, 93_600):
            report = run_design(DesignConfig(design=Design.BB_HIT, n=n), GridPlan(n=n), 500, 77, names=("uncorrected",))
            spreads.append(report.row("uncorrected").sd)
        self.assertTrue(1.2 <= spreads[0] / spreads[1] <= 1.6)


if __name__ == "__main__":
    unittest.main()
