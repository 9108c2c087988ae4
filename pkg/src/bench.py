"""Monte Carlo harness: simulate a design many times and score all six estimators."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import ESTIMATOR_NAMES, DEFAULT_WORKERS
from src.core import TickSeries, EstimateRecord, LamaError, DataError, ConfigError
from src.baseline import tsrv, msrv, realized_kernel, preaveraging
from src.lama import GridPlan, uncorrected_estimate, final_estimate
from src.simulate import DesignConfig, simulate_design_path

logger = logging.getLogger(__name__)

# Every entry takes (series, plan, **options)
ESTIMATORS: dict[str, Callable[..., EstimateRecord]] = {
    "tsrv": lambda series, plan, **kw: tsrv(series, **kw),
    "msrv": lambda series, plan, **kw: msrv(series, **kw),
    "kernel": lambda series, plan, **kw: realized_kernel(series, **kw),
    "preavg": lambda series, plan, **kw: preaveraging(series, **kw),
    "uncorrected": uncorrected_estimate,
    "final": final_estimate,
}

# Column labels in report order
TABLE_LABELS = {
    "tsrv": "TSRV",
    "msrv": "MSRV",
    "kernel": "Kernel",
    "preavg": "Pre-averaging",
    "uncorrected": "Uncorrected",
    "final": "Final",
}


def evaluate_estimators(
    series: TickSeries,
    plan: Optional[GridPlan],
    names=ESTIMATOR_NAMES,
    options: Optional[dict] = None,
) -> tuple[dict[str, EstimateRecord], dict[str, str]]:
    """
    Run the named estimators on one series.

    A failing estimator is logged and reported; it never stops the others.
    ``options`` maps an estimator name to extra keyword arguments. The
    baselines ignore ``plan``, so it may be None when only they run.

    Returns:
        Tuple of (records by name, error messages by name)
    """
    records, errors = {}, {}
    for name in names:
        try:
            records[name] = ESTIMATORS[name](series, plan, **(options or {}).get(name, {}))
        except LamaError as e:
            logger.warning("%s failed: %s", name, e)
            errors[name] = str(e)
    return records, errors


@dataclass(frozen=True)
class PathResult:
    """Per-path outcome: truth, estimates (None on failure) and simulation info."""

    path_index: int
    noise_seed: int
    true_iv: float
    n_increments: int
    estimates: dict
    errors: dict = field(default_factory=dict)
    clamped_blocks: Optional[int] = None


@dataclass(frozen=True)
class EstimatorRow:
    """Aggregate error statistics of one estimator."""

    name: str
    rmse: float
    bias: float
    sd: Optional[float]
    valid: int
    failed: int

    @property
    def invalid(self) -> bool:
        return self.valid == 0


@dataclass(frozen=True)
class BenchmarkReport:
    """Everything a benchmark run produced."""

    design: str
    paths: int
    master_seed: int
    rows: list
    path_results: list
    wall_time: float
    config: dict
    plan: dict
    path_failures: int = 0

    def row(self, name: str) -> EstimatorRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def estimates(self, name: str) -> np.ndarray:
        """Valid estimates of one estimator in path order."""
        values = [r.estimates.get(name) for r in self.path_results]
        return np.array([v for v in values if v is not None], dtype=float)


def evaluate_path(
    config: DesignConfig,
    plan: GridPlan,
    master_seed: int,
    path_index: int,
    names=ESTIMATOR_NAMES,
    options: Optional[dict] = None,
) -> PathResult:
    """Simulate one path and evaluate every estimator on the same observed series."""
    _, series, info = simulate_design_path(config, master_seed, path_index)
    records, errors = evaluate_estimators(series, plan, names, options)
    clamped = None
    if "final" in records:
        clamped = records["final"].diagnostics.get("clamped_blocks")
    return PathResult(
        path_index=path_index,
        noise_seed=info["noise_seed"],
        true_iv=info["true_iv"],
        n_increments=info["n_increments"],
        estimates={name: (records[name].value if name in records else None) for name in names},
        errors=errors,
        clamped_blocks=clamped,
    )


def _safe_evaluate(args) -> Optional[PathResult]:
    config, plan, master_seed, path_index, names, options = args
    try:
        return evaluate_path(config, plan, master_seed, path_index, names, options)
    except LamaError as e:
        logger.warning("path %d failed: %s", path_index, e)
        return None


def aggregate(results: list, name: str, constant_truth: bool) -> EstimatorRow:
    """RMSE, bias and (for constant truth) sample s.d. over the valid paths."""
    pairs = [(r.estimates.get(name), r.true_iv) for r in results]
    pairs = [(est, truth) for est, truth in pairs if est is not None]
    failed = len(results) - len(pairs)
    if not pairs:
        return EstimatorRow(name, math.nan, math.nan, None, 0, failed)
    est = np.array([p[0] for p in pairs])
    diff = est - np.array([p[1] for p in pairs])
    sd = float(np.std(est, ddof=1)) if constant_truth and len(est) > 1 else None
    return EstimatorRow(
        name=name,
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        bias=float(np.mean(diff)),
        sd=sd,
        valid=len(est),
        failed=failed,
    )


def run_design(
    config: DesignConfig,
    plan: GridPlan,
    paths: int,
    master_seed: int,
    workers: int = DEFAULT_WORKERS,
    names=ESTIMATOR_NAMES,
    options: Optional[dict] = None,
) -> BenchmarkReport:
    """
    Monte Carlo comparison of the estimators on one design.

    Args:
        config: Simulation design
        plan: Grid plan for the local-averaging estimators
        paths: Number of simulated paths
        master_seed: Run seed; path seeds derive from (master_seed, path index)
        workers: Worker processes; 1 runs in-process
        names: Estimators to evaluate
        options: Per-estimator keyword arguments, e.g. {"msrv": {"sparse_t2": False}}

    Returns:
        BenchmarkReport with one row per estimator
    """
    if paths < 1:
        raise ConfigError(f"paths >= 1 violated: paths={paths}")
    started = time.perf_counter()
    jobs = [(config, plan, master_seed, i, tuple(names), options) for i in range(paths)]
    logger.info("running %s: %d paths on %d worker(s)", config.design.value, paths, workers)
    if workers <= 1:
        outcomes = [_safe_evaluate(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_safe_evaluate, jobs, chunksize=max(1, paths // (4 * workers))))
    results = sorted((r for r in outcomes if r is not None), key=lambda r: r.path_index)
    path_failures = paths - len(results)
    if path_failures:
        logger.warning("%d of %d paths failed to simulate", path_failures, paths)

    constant_truth = config.design.constant_truth
    rows = [aggregate(results, name, constant_truth) for name in names]
    for row in rows:
        if row.invalid:
            logger.warning("%s produced no valid estimate", row.name)
    return BenchmarkReport(
        design=config.design.value,
        paths=paths,
        master_seed=master_seed,
        rows=rows,
        path_results=results,
        wall_time=time.perf_counter() - started,
        config=config.as_dict(),
        plan=plan.as_dict(),
        path_failures=path_failures,
    )


@dataclass(frozen=True, eq=False)
class DistributionReport:
    """Standardized sampling distribution of one estimator."""

    name: str
    count: int
    mean: float
    sd: float
    skewness: float
    excess_kurtosis: float
    bin_edges: np.ndarray
    counts: np.ndarray
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray


def distribution_summary(values: np.ndarray, name: str = "values", bins: int = 30) -> DistributionReport:
    """Histogram, normal QQ pairs and moments of standardized ``values``."""
    values = np.asarray(values, dtype=float)
    if len(values) < 30:
        raise DataError(f"{name}: need at least 30 estimates, got {len(values)}")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if not sd > 0.0:
        raise DataError(f"{name}: estimates have zero standard deviation")
    z = (values - mean) / sd
    counts, edges = np.histogram(z, bins=bins)
    probs = np.arange(1, len(z) + 1) / (len(z) + 1)
    return DistributionReport(
        name=name,
        count=len(z),
        mean=mean,
        sd=sd,
        skewness=float(stats.skew(z)),
        excess_kurtosis=float(stats.kurtosis(z, fisher=True)),
        bin_edges=edges,
        counts=counts,
        qq_theoretical=stats.norm.ppf(probs),
        qq_empirical=np.sort(z),
    )


def distribution_report(report: BenchmarkReport, name: str) -> DistributionReport:
    """Distribution of one estimator's valid estimates across the report's paths."""
    return distribution_summary(report.estimates(name), name)
