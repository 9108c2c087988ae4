"""Domain types, errors and model-free realized measures shared by every estimator."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import SPARSE_INTERVAL

logger = logging.getLogger(__name__)


class LamaError(Exception):
    """Base class for every error raised by this package."""


class DataError(LamaError):
    """Invalid tick data or a malformed tick file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EstimatorError(LamaError):
    """An estimator could not produce a value (tuning or numeric failure)."""

    def __init__(self, estimator: str, message: str):
        self.estimator = estimator
        super().__init__(f"{estimator}: {message}")


class ConfigError(LamaError):
    """An invalid parameter combination; the message names the violated invariant."""


@dataclass(frozen=True, eq=False)
class TickSeries:
    """
    Ordered (time, log-price) observations on [0, 1].

    ``times[0]`` is the observation at t_0, so a series with N_1 increments
    holds N_1 + 1 points.
    """

    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        prices = np.array(self.prices, dtype=float)
        if times.ndim != 1 or prices.ndim != 1:
            raise DataError("times and prices must be one-dimensional")
        if len(times) != len(prices):
            raise DataError(f"times ({len(times)}) and prices ({len(prices)}) differ in length")
        if len(times) < 2:
            raise DataError("a series needs at least 2 observations")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(prices))):
            raise DataError("times and prices must be finite")
        if times[0] < 0.0 or times[-1] > 1.0:
            raise DataError("times must lie in [0, 1]")
        if np.any(np.diff(times) <= 0.0):
            raise DataError("times must be strictly increasing")
        times.setflags(write=False)
        prices.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)

    @property
    def n_increments(self) -> int:
        """N_1, the number of increments."""
        return len(self.prices) - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.prices)

    def shifted(self, offset: float) -> "TickSeries":
        return TickSeries(self.times, self.prices + offset)

    def scaled(self, factor: float) -> "TickSeries":
        return TickSeries(self.times, self.prices * factor)


@dataclass(frozen=True)
class NoiseSpec:
    """I.i.d. Gaussian microstructure noise with standard deviation ``sigma_eps``."""

    sigma_eps: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.sigma_eps >= 0.0 and math.isfinite(self.sigma_eps)):
            raise ConfigError(f"sigma_eps >= 0 violated: {self.sigma_eps}")


@dataclass(frozen=True)
class EstimateRecord:
    """One estimator's output plus the tuning it used and its diagnostics."""

    estimator_name: str
    value: float
    tuning: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise EstimatorError(self.estimator_name, f"non-finite estimate {self.value}")


def rv(series: TickSeries) -> float:
    """Realized volatility: sum of squared increments."""
    return float(np.sum(series.increments() ** 2))


def power_variation(series: TickSeries, exponent: int) -> float:
    """
    Sum of increments raised to ``exponent``.

    Args:
        series: Observed series
        exponent: 3 (signed tricity sum) or 4 (quarticity sum)

    Returns:
        Sum of (Delta Y)^exponent
    """
    if exponent not in (3, 4):
        raise ValueError(f"exponent must be 3 or 4, got {exponent}")
    return float(np.sum(series.increments() ** exponent))


def tricity(series: TickSeries) -> float:
    """sqrt(N_1) times the sum of cubed increments."""
    return math.sqrt(series.n_increments) * power_variation(series, 3)


def quarticity(series: TickSeries) -> float:
    """N_1 / 3 times the sum of fourth-power increments."""
    return series.n_increments / 3.0 * power_variation(series, 4)


def noise_var_hat(series: TickSeries) -> float:
    """Noise variance estimate [Y,Y]_1 / (2 N_1)."""
    return rv(series) / (2.0 * series.n_increments)


def sparse_indices(times: np.ndarray, interval: float) -> np.ndarray:
    """Previous-tick indices at every multiple of ``interval``, plus first and last."""
    grid = np.arange(1, int(np.floor(times[-1] / interval + 1e-9)) + 1) * interval
    # Tolerance keeps a tick that sits exactly on a gridpoint from being missed by rounding
    idx = np.searchsorted(times, grid + 1e-12, side="right") - 1
    idx = np.concatenate(([0], idx[idx >= 0], [len(times) - 1]))
    return np.unique(idx)


def sparse_rv(series: TickSeries, interval: float = SPARSE_INTERVAL) -> float:
    """
    RV of the series subsampled at a fixed calendar interval.

    Args:
        series: Observed series
        interval: Sampling interval as a fraction of [0, 1]

    Returns:
        Realized volatility of the previous-tick subsample
    """
    if not 0.0 < interval < 1.0:
        raise ValueError(f"interval must lie in (0, 1), got {interval}")
    idx = sparse_indices(series.times, interval)
    if len(idx) < 2:
        raise DataError("sparse subsample has fewer than 2 points")
    return float(np.sum(np.diff(series.prices[idx]) ** 2))


def read_tick_file(path) -> TickSeries:
    """
    Parse a ``time,price`` tick file.

    Lines starting with ``#`` are comments. Parsing is strict: every
    problem is reported with its line number.

    Args:
        path: Path to the tick file

    Returns:
        The parsed TickSeries
    """
    times, prices = [], []
    header_seen = False
    last_time = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = line.split(",")
            if not header_seen:
                if [c.strip() for c in row] != ["time", "price"]:
                    raise DataError(f"expected header 'time,price', got {','.join(row)!r}", lineno)
                header_seen = True
                continue
            if len(row) != 2:
                raise DataError(f"expected 2 fields, got {len(row)}", lineno)
            try:
                t, y = float(row[0]), float(row[1])
            except ValueError:
                raise DataError(f"non-numeric value in {','.join(row)!r}", lineno) from None
            if not (math.isfinite(t) and math.isfinite(y)):
                raise DataError("non-finite value", lineno)
            if not 0.0 <= t <= 1.0:
                raise DataError(f"time {t} outside [0, 1]", lineno)
            if last_time is not None and t <= last_time:
                raise DataError(f"time {t} does not increase (previous {last_time})", lineno)
            last_time = t
            times.append(t)
            prices.append(y)
    if not header_seen:
        raise DataError(f"{path}: missing 'time,price' header")
    logger.debug("read %d ticks from %s", len(times), path)
    return TickSeries(np.array(times), np.array(prices))


def write_tick_file(series: TickSeries, path, comment: Optional[str] = None) -> Path:
    """Write a series in the ``time,price`` format, optionally behind a comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(["time", "price"])
        for t, y in zip(series.times, series.prices):
            writer.writerow([repr(float(t)), repr(float(y))])
    logger.debug("wrote %d ticks to %s", len(series.times), path)
    return path
