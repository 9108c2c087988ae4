"""
Competitor estimators: TSRV, MSRV, realized kernel (Parzen) and pre-averaging.

Every tuning constant is data-driven from the noise-variance estimate and
the 5-minute sparse RV, so all four estimators are scale-covariant.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numba import njit
from scipy.integrate import quad

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import SPARSE_INTERVAL, PREAVG_THETA_CONST
from src.core import TickSeries, EstimateRecord, EstimatorError, rv, noise_var_hat, sparse_rv

logger = logging.getLogger(__name__)

PHI_1 = 1.0
PHI_2 = 1.0 / 12.0


@dataclass(frozen=True)
class KernelConstants:
    """Integrals of a kernel function and its derivatives over [0, 1]."""

    f00: float
    f02: float
    f04: float
    fppp0: float

    def __post_init__(self) -> None:
        if not (self.f00 > 0.0 and all(math.isfinite(v) for v in (self.f00, self.f02, self.f04, self.fppp0))):
            raise ValueError(f"invalid kernel constants {self}")


def _tuning_inputs(series: TickSeries, name: str, interval: float) -> tuple[float, float]:
    """Noise variance estimate and sparse RV; rejects series that cannot be tuned."""
    noise_var = noise_var_hat(series)
    sub = sparse_rv(series, interval)
    if sub <= 0.0:
        raise EstimatorError(name, f"sparse RV is {sub:.3e}; cannot tune")
    return noise_var, sub


def _clamp(value: int, low: int, high: int) -> int:
    return max(low, min(high, value))


def lagged_rv(prices: np.ndarray, lag: int) -> float:
    """Sum of squared lag-``lag`` differences; equals the total RV over the ``lag`` offset sub-grids."""
    diffs = prices[lag:] - prices[:-lag]
    return float(np.sum(diffs ** 2))


@njit(cache=True)
def _scale_rvs(prices, k):
    out = np.empty(k)
    n = prices.shape[0]
    for j in range(1, k + 1):
        total = 0.0
        for i in range(n - j):
            d = prices[i + j] - prices[i]
            total += d * d
        out[j - 1] = total / j
    return out


def scale_rvs(prices: np.ndarray, k: int) -> np.ndarray:
    """lagged_rv(prices, j) / j for j = 1..k; K can reach N_1 / 2, hence the compiled loop."""
    return _scale_rvs(np.ascontiguousarray(prices, dtype=np.float64), int(k))


def tsrv(series: TickSeries, k_override: Optional[int] = None, interval: float = SPARSE_INTERVAL) -> EstimateRecord:
    """
    Small-sample adjusted two-scales realized volatility.

    Args:
        series: Observed series, N_1 >= 4
        k_override: Fix the number of sub-grids instead of tuning it
        interval: Sparse-RV interval used for tuning

    Returns:
        EstimateRecord with K and c_tsrv in ``tuning``
    """
    n = series.n_increments
    if n < 4:
        raise EstimatorError("tsrv", f"needs N_1 >= 4, got {n}")
    noise_var, sub = _tuning_inputs(series, "tsrv", interval)
    c_tsrv = (12.0 * noise_var ** 2 / sub ** 2) ** (1.0 / 3.0)
    if k_override is None:
        k = _clamp(int(round(c_tsrv * n ** (2.0 / 3.0))), 2, n // 2)
    else:
        k = k_override
    if not 2 <= k <= n:
        raise EstimatorError("tsrv", f"K must lie in [2, N_1={n}], got {k}")
    slow = lagged_rv(series.prices, k) / k
    value = (slow - rv(series) / k) / (1.0 - 1.0 / k)
    logger.debug("tsrv: K=%d c=%.4f", k, c_tsrv)
    return EstimateRecord("tsrv", value, tuning={"K": k, "c_tsrv": c_tsrv})


def msrv_weights(k: int, n: int) -> np.ndarray:
    """lambda_1..lambda_K with the end adjustment at j = 1, 2."""
    i = np.arange(1, k + 1, dtype=float)
    x = i / k
    a = (12.0 * x - 6.0) * i / k ** 2 - 12.0 * i / (2.0 * k ** 3)
    adjust = 1.0 / ((n + 1) / 2.0)
    a[0] += adjust
    if k >= 2:
        a[1] -= adjust
    return a


def msrv(
    series: TickSeries,
    k_override: Optional[int] = None,
    interval: float = SPARSE_INTERVAL,
    sparse_t2: bool = True,
) -> EstimateRecord:
    """
    Multi-scale realized volatility with h(x) = 12x - 6.

    The bandwidth constant takes T_2 = 52 ([Y,Y]^sub)^2 / 35, which keeps K
    at the order of the TSRV grid count. With ``sparse_t2=False`` it uses
    52 (sigma_eps^2)^2 / 35; on noisy drifting paths that pushes K to the
    N_1/2 clamp.

    Args:
        series: Observed series
        k_override: Fix K instead of tuning it
        interval: Sparse-RV interval used for tuning
        sparse_t2: Take T_2 from the sparse RV rather than the noise variance

    Returns:
        EstimateRecord with K and c_msrv in ``tuning``
    """
    n = series.n_increments
    if n // 2 < 3:
        raise EstimatorError("msrv", f"series too short for K >= 3 (N_1={n})")
    noise_var, sub = _tuning_inputs(series, "msrv", interval)
    t1 = 48.0 * noise_var ** 2
    t2 = 52.0 * (sub if sparse_t2 else noise_var) ** 2 / 35.0
    t3 = 24.0 * noise_var ** 2 / 5.0
    t4 = 48.0 * sub * noise_var / 5.0
    c_msrv = math.sqrt((t3 + t4 + math.sqrt((t3 + t4) ** 2 + 12.0 * t1 * t2)) / (2.0 * t2))
    if k_override is None:
        k = _clamp(int(round(c_msrv * math.sqrt(n))), 3, n // 2)
    else:
        k = k_override
    if not 1 <= k <= n:
        raise EstimatorError("msrv", f"K must lie in [1, N_1={n}], got {k}")
    weights = msrv_weights(k, n)
    scales = scale_rvs(series.prices, k)
    value = float(np.dot(weights, scales))
    return EstimateRecord(
        "msrv", value,
        tuning={"K": k, "c_msrv": c_msrv},
        diagnostics={"weight_sum": float(weights.sum())},
    )


def parzen(x: float) -> float:
    """Parzen kernel on [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"parzen is defined on [0, 1], got {x}")
    if x <= 0.5:
        return 1.0 - 6.0 * x ** 2 + 6.0 * x ** 3
    return 2.0 * (1.0 - x) ** 3


def _parzen_d2(x: float) -> float:
    return -12.0 + 36.0 * x if x <= 0.5 else 12.0 * (1.0 - x)


def _parzen_d3(x: float) -> float:
    return 36.0 if x < 0.5 else -12.0


def _piecewise_quad(func) -> float:
    left, _ = quad(func, 0.0, 0.5, epsabs=1e-10, epsrel=1e-10)
    right, _ = quad(func, 0.5, 1.0, epsabs=1e-10, epsrel=1e-10)
    return left + right


@lru_cache(maxsize=None)
def parzen_constants() -> KernelConstants:
    """Kernel integrals for the Parzen kernel, computed once."""
    return KernelConstants(
        f00=_piecewise_quad(lambda x: parzen(x) ** 2),
        f02=_piecewise_quad(lambda x: parzen(x) * _parzen_d2(x)),
        f04=_piecewise_quad(lambda x: parzen(x) * _parzen_d3(x)),
        fppp0=_parzen_d3(0.0),
    )


def realized_autocovariance(increments: np.ndarray, lag: int) -> float:
    """sum_i dY_i (dY_{i-lag} + dY_{i+lag}), out-of-range terms dropped."""
    if lag >= len(increments):
        return 0.0
    return 2.0 * float(np.dot(increments[lag:], increments[:-lag]))


def realized_kernel(series: TickSeries, h_override: Optional[int] = None, interval: float = SPARSE_INTERVAL) -> EstimateRecord:
    """
    Realized kernel with Parzen weights f((h-1)/H).

    Args:
        series: Observed series, N_1 >= 4
        h_override: Fix the bandwidth H instead of tuning it
        interval: Sparse-RV interval used for tuning

    Returns:
        EstimateRecord with H and c_ker in ``tuning``
    """
    n = series.n_increments
    if n < 4:
        raise EstimatorError("kernel", f"needs N_1 >= 4, got {n}")
    noise_var, sub = _tuning_inputs(series, "kernel", interval)
    kc = parzen_constants()
    shape = (-kc.f02 + math.sqrt(kc.f02 ** 2 + 3.0 * kc.f00 * (kc.fppp0 + kc.f04))) / kc.f00
    c_ker = math.sqrt(noise_var / sub) * math.sqrt(shape)
    if h_override is None:
        bandwidth = _clamp(int(round(c_ker * math.sqrt(n))), 1, n - 1)
    else:
        bandwidth = h_override
    if bandwidth < 1:
        raise EstimatorError("kernel", f"H must be >= 1, got {bandwidth}")
    increments = series.increments()
    value = float(np.sum(increments ** 2))
    for lag in range(1, bandwidth + 1):
        value += parzen((lag - 1) / bandwidth) * realized_autocovariance(increments, lag)
    return EstimateRecord("kernel", value, tuning={"H": bandwidth, "c_ker": c_ker})


def preaveraging(
    series: TickSeries,
    kn_override: Optional[int] = None,
    theta_override: Optional[float] = None,
    interval: float = SPARSE_INTERVAL,
) -> EstimateRecord:
    """
    Pre-averaging estimator with the (1/2, 1/2) step weight function.

    Args:
        series: Observed series
        kn_override: Fix the (even) window k_n; theta then defaults to k_n / sqrt(N_1)
        theta_override: Fix theta instead of tuning it
        interval: Sparse-RV interval used for tuning

    Returns:
        EstimateRecord with theta and k_n in ``tuning``
    """
    n = series.n_increments
    if theta_override is not None:
        theta = theta_override
    elif kn_override is not None:
        theta = kn_override / math.sqrt(n)
    else:
        noise_var, sub = _tuning_inputs(series, "preavg", interval)
        theta = PREAVG_THETA_CONST * math.sqrt(noise_var) / math.sqrt(sub)
    if kn_override is None:
        kn = max(2, 2 * int(round(math.sqrt(n) * theta / 2.0)))
    else:
        kn = kn_override
    if kn % 2 or kn < 2:
        raise EstimatorError("preavg", f"k_n must be even and >= 2, got {kn}")
    if kn > n:
        raise EstimatorError("preavg", f"k_n={kn} exceeds N_1={n}")
    if theta <= 0.0:
        raise EstimatorError("preavg", f"theta must be positive, got {theta}")

    y = series.prices
    csum = np.concatenate(([0.0], np.cumsum(y - y[0])))
    half = kn // 2
    start = np.arange(0, n - kn + 2)
    # Second half minus first half of each k_n window
    upper = csum[start + kn] - csum[start + half]
    lower = csum[start + half] - csum[start]
    bar = (upper - lower) / kn
    value = (
        float(np.sum(bar ** 2)) / (theta * PHI_2 * math.sqrt(n))
        - PHI_1 * rv(series) / (2.0 * theta ** 2 * PHI_2 * n)
    )
    return EstimateRecord("preavg", value, tuning={"theta": theta, "k_n": kn})


BASELINES = {
    "tsrv": tsrv,
    "msrv": msrv,
    "kernel": realized_kernel,
    "preavg": preaveraging,
}
