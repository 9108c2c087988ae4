"""
Local-averaging / moving-average estimators of integrated volatility under
endogenous observation times and microstructure noise.

Sub-grid k (0 <= k < q) holds the observations with index i q + p + k. At
each sub-grid point the p preceding observations (the point itself
included) are averaged; realized measures are then taken on the averaged
sequence. The multi-grid estimator averages over all q sub-grids, divides
out the attenuation 1 + A(p, q), and the final estimator removes the
endogeneity bias with block-wise tricity/variance ratios.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import P_DEFAULT, Q_DEFAULT, D1_DEFAULT, F2_FLOOR
from src.core import TickSeries, EstimateRecord, EstimatorError, ConfigError, noise_var_hat

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridPlan:
    """Sub-grid layout: n, local-average width p, block size q, l and d_1."""

    n: int
    p: int = P_DEFAULT
    q: int = Q_DEFAULT
    d1: int = D1_DEFAULT
    ell: int = field(init=False)

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ConfigError(f"p >= 1 violated: p={self.p}")
        # p = q = 1 collapses to RV without the first increment: sub-grids start at index p
        if not (self.q > self.p or self.p == self.q == 1):
            raise ConfigError(f"q > p violated: p={self.p}, q={self.q}")
        if self.d1 < 1:
            raise ConfigError(f"d1 >= 1 violated: d1={self.d1}")
        if self.n <= self.p:
            raise ConfigError(f"n > p violated: n={self.n}, p={self.p}")
        object.__setattr__(self, "ell", (self.n - self.p) // self.q)

    def subgrid_index(self, i: int, k: int = 0, j: int = 0) -> int:
        """Observation index of t^k_{i,j} = t_{i q + p - j + k}."""
        return i * self.q + self.p - j + k

    def as_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "q": self.q, "ell": self.ell, "d1": self.d1}


@dataclass(frozen=True, eq=False)
class BiasDiagnostics:
    """Per-block quantities behind the bias correction."""

    block_count: int
    clamped_blocks: int
    f2_values: np.ndarray
    f3_values: np.ndarray

    def __post_init__(self) -> None:
        if not 0 <= self.clamped_blocks <= self.block_count:
            raise ValueError("clamped_blocks must lie in [0, block_count]")

    def as_dict(self) -> dict:
        return {"block_count": self.block_count, "clamped_blocks": self.clamped_blocks}


def build_grid_plan(
    series: TickSeries,
    p: int = P_DEFAULT,
    q: int = Q_DEFAULT,
    d1: int = D1_DEFAULT,
    n_override: Optional[int] = None,
) -> GridPlan:
    """
    Build and validate a plan for ``series``.

    Args:
        series: Observed series
        p: Local-average width
        q: Block size, q > p
        d1: Blocks of d1 q ticks for the bias correction
        n_override: Nominal frequency; defaults to the observed N_1

    Returns:
        Validated GridPlan with l >= 2
    """
    if not q > p >= 1:
        raise ConfigError(f"q > p >= 1 violated: p={p}, q={q}")
    n_obs = series.n_increments
    if n_obs < p + q:
        raise ConfigError(f"series too short: N_1={n_obs} < p + q = {p + q}")
    plan = GridPlan(n=n_obs if n_override is None else n_override, p=p, q=q, d1=d1)
    if plan.ell < 2:
        raise ConfigError(f"l >= 2 violated: l={plan.ell}")
    return plan


def _rolling_means(prices: np.ndarray, p: int) -> np.ndarray:
    """m[c] = mean(Y[c-p+1 .. c]); entries with c < p - 1 are NaN."""
    centered = prices - prices[0]
    csum = np.concatenate(([0.0], np.cumsum(centered)))
    means = np.full(len(prices), np.nan)
    means[p - 1:] = (csum[p:] - csum[:-p]) / p + prices[0]
    return means


def local_averages(series: TickSeries, plan: GridPlan, k: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """
    Local averages on sub-grid ``k``.

    Args:
        series: Observed series
        plan: Grid plan
        k: Sub-grid index in [0, q-1]

    Returns:
        Tuple of (times t_{iq+p+k}, averages of Y over the p observations ending there)
    """
    if not 0 <= k < plan.q:
        raise ValueError(f"sub-grid index must lie in [0, {plan.q - 1}], got {k}")
    idx = np.arange(plan.p + k, series.n_increments + 1, plan.q)
    means = _rolling_means(series.prices, plan.p)
    return series.times[idx], means[idx]


def _subgrid_increments(series: TickSeries, plan: GridPlan) -> np.ndarray:
    """
    Increments of the local averages for all sub-grids at once.

    Entry c - (p + q) is the increment whose right endpoint is observation c,
    for c = p + q .. N_1; it belongs to sub-grid (c - p) mod q.
    """
    means = _rolling_means(series.prices, plan.p)
    return means[plan.p + plan.q:] - means[plan.p:-plan.q]


def subgrid_power_variations(series: TickSeries, plan: GridPlan, k: int = 0) -> dict:
    """Realized variance, sqrt(l)-scaled tricity and l-scaled quarticity of local averages on sub-grid k."""
    _, values = local_averages(series, plan, k)
    inc = np.diff(values)
    return {
        "rv": float(np.sum(inc ** 2)),
        "tricity": math.sqrt(plan.ell) * float(np.sum(inc ** 3)),
        "quarticity": plan.ell * float(np.sum(inc ** 4)),
    }


def la_single_grid(series: TickSeries, plan: GridPlan, k: int = 0, noise_var: Optional[float] = None) -> EstimateRecord:
    """
    Single-grid local averaging estimator [Ybar,Ybar]^S - (2 L_1 / p) sigma_eps^2.

    Args:
        series: Observed series
        plan: Grid plan
        k: Sub-grid to use (0 by default)
        noise_var: Known noise variance; estimated from the series when omitted

    Returns:
        EstimateRecord carrying L_1 and sub-grid tricity/quarticity diagnostics
    """
    _, values = local_averages(series, plan, k)
    if len(values) < 2:
        raise EstimatorError("la", f"sub-grid {k} has {len(values)} local averages; need 2")
    inc = np.diff(values)
    l_count = len(inc)
    if noise_var is None:
        noise_var = noise_var_hat(series)
    value = float(np.sum(inc ** 2)) - 2.0 * l_count / plan.p * noise_var
    powers = subgrid_power_variations(series, plan, k)
    return EstimateRecord(
        "la", value,
        tuning={"p": plan.p, "q": plan.q, "ell": plan.ell, "k": k},
        diagnostics={"L1": l_count, "tricity": powers["tricity"], "quarticity": powers["quarticity"]},
    )


def a_pq(p: int, q: int) -> float:
    """Attenuation A(p, q) = (2/q) sum_{j<p} (j^2/p^2 - j/p); always <= 0."""
    if p < 1 or q < 1:
        raise ValueError(f"p, q >= 1 required, got p={p}, q={q}")
    j = np.arange(1, p, dtype=float)
    return 2.0 / q * float(np.sum(j ** 2 / p ** 2 - j / p))


def _check_subgrids(series: TickSeries, plan: GridPlan) -> None:
    # The last sub-grid (k = q - 1) must reach its second point
    if series.n_increments < 2 * plan.q + plan.p - 1:
        raise EstimatorError(
            "ma", f"N_1={series.n_increments} leaves a sub-grid with fewer than 2 local averages"
        )


def ma_multigrid_rv(series: TickSeries, plan: GridPlan) -> float:
    """(1/q) sum_k [Ybar,Ybar]^{S_k}_1."""
    _check_subgrids(series, plan)
    return float(np.sum(_subgrid_increments(series, plan) ** 2)) / plan.q


def _attenuation(plan: GridPlan) -> float:
    factor = 1.0 + a_pq(plan.p, plan.q)
    if factor <= 0.0:
        raise EstimatorError("uncorrected", f"1 + A(p,q) = {factor:.4f} <= 0")
    return factor


def _noise_corrected_ma(series: TickSeries, plan: GridPlan, noise_var: float) -> float:
    n_obs = series.n_increments
    return ma_multigrid_rv(series, plan) - 2.0 * n_obs / (plan.p * plan.q) * noise_var


def uncorrected_estimate(series: TickSeries, plan: GridPlan, noise_var: Optional[float] = None) -> EstimateRecord:
    """
    F^(2)_n(1): multi-grid RV minus the noise term, divided by 1 + A(p, q).

    Args:
        series: Observed series
        plan: Grid plan
        noise_var: Known noise variance; estimated from the series when omitted

    Returns:
        EstimateRecord named ``uncorrected``
    """
    factor = _attenuation(plan)
    if noise_var is None:
        noise_var = noise_var_hat(series)
    value = _noise_corrected_ma(series, plan, noise_var) / factor
    return EstimateRecord(
        "uncorrected", value,
        tuning={"p": plan.p, "q": plan.q, "ell": plan.ell, "n": plan.n},
        diagnostics={"a_pq": factor - 1.0, "noise_var": noise_var},
    )


def uncorrected_path(series: TickSeries, plan: GridPlan, t: float) -> float:
    """F^(2)_n(t): the uncorrected estimator restricted to increments ending at or before t."""
    factor = _attenuation(plan)
    _check_subgrids(series, plan)
    noise_var = noise_var_hat(series)
    right = np.arange(plan.p + plan.q, series.n_increments + 1)
    inc = _subgrid_increments(series, plan)
    mask = series.times[right] <= t
    n_t = int(np.searchsorted(series.times, t, side="right")) - 1
    return (float(np.sum(inc[mask] ** 2)) / plan.q - 2.0 * n_t / (plan.p * plan.q) * noise_var) / factor


def block_boundaries(n_obs: int, plan: GridPlan) -> np.ndarray:
    """
    Observation indices of tau_0, tau_1, ...: every d_1 q ticks.

    A trailing partial block is merged into the last full block.
    """
    width = plan.d1 * plan.q
    full = n_obs // width
    if full < 2:
        raise EstimatorError("final", f"N_1={n_obs} gives {full} blocks of {width} ticks; need 2")
    bounds = np.arange(full + 1) * width
    bounds[-1] = n_obs
    return bounds


def f2_f3_blocks(series: TickSeries, plan: GridPlan) -> tuple[np.ndarray, np.ndarray, np.ndarray, BiasDiagnostics]:
    """
    Block derivatives of F^(2) and F^(3).

    Block i covers the observations (tau_i, tau_{i+1}]. F^(2) increments
    restrict every sum of the uncorrected estimator to the block; F^(3)
    increments are sqrt(l)/q times the summed cubes of local-average
    increments ending in the block. f^(2) is floored at F2_FLOOR.

    Args:
        series: Observed series, N_1 >= 2 d_1 q
        plan: Grid plan

    Returns:
        Tuple of (f2 per block, f3 per block, tau times, BiasDiagnostics)
    """
    _check_subgrids(series, plan)
    factor = _attenuation(plan)
    n_obs = series.n_increments
    bounds = block_boundaries(n_obs, plan)
    noise_var = noise_var_hat(series)

    inc = _subgrid_increments(series, plan)
    # Cumulative sums indexed by right endpoint c = 0..N_1
    sq = np.zeros(n_obs + 1)
    cube = np.zeros(n_obs + 1)
    sq[plan.p + plan.q:] = inc ** 2
    cube[plan.p + plan.q:] = inc ** 3
    sq_cum = np.concatenate(([0.0], np.cumsum(sq)))
    cube_cum = np.concatenate(([0.0], np.cumsum(cube)))

    lo, hi = bounds[:-1], bounds[1:]
    sq_block = sq_cum[hi + 1] - sq_cum[lo + 1]
    cube_block = cube_cum[hi + 1] - cube_cum[lo + 1]
    taus = series.times[bounds]
    widths = np.diff(taus)

    f2_raw = (sq_block / plan.q - 2.0 * (hi - lo) / (plan.p * plan.q) * noise_var) / factor / widths
    f3 = math.sqrt(plan.ell) / plan.q * cube_block / widths
    clamped = f2_raw < F2_FLOOR
    f2 = np.where(clamped, F2_FLOOR, f2_raw)
    if clamped.any():
        logger.warning("f2 floored in %d of %d blocks", int(clamped.sum()), len(f2))
    diagnostics = BiasDiagnostics(
        block_count=len(f2),
        clamped_blocks=int(clamped.sum()),
        f2_values=f2,
        f3_values=f3,
    )
    return f2, f3, taus, diagnostics


def boundary_average_increments(series: TickSeries, plan: GridPlan, bounds: np.ndarray) -> np.ndarray:
    """Delta Ybar at tau_1, tau_2, ...: local averages ending at observation min(b + p, N_1)."""
    means = _rolling_means(series.prices, plan.p)
    ends = np.minimum(bounds + plan.p, series.n_increments)
    return np.diff(means[ends])


def bias_correction(series: TickSeries, plan: GridPlan) -> tuple[float, BiasDiagnostics]:
    """
    Endogeneity bias estimate B = (2/3) sum_i f3(tau_{i-1}) / f2(tau_{i-1}) Delta Ybar_{tau_i}.

    The ratio at tau_{i-1} is the derivative over the block ending at
    tau_{i-1}; for i = 1 the first block's own derivative is used.

    Returns:
        Tuple of (B, BiasDiagnostics)
    """
    f2, f3, _, diagnostics = f2_f3_blocks(series, plan)
    bounds = block_boundaries(series.n_increments, plan)
    d_bar = boundary_average_increments(series, plan, bounds)
    ratio = f3 / f2
    paired = np.concatenate((ratio[:1], ratio[:-1]))
    return 2.0 / 3.0 * float(np.dot(paired, d_bar)), diagnostics


def final_estimate(
    series: TickSeries,
    plan: GridPlan,
    bias: Optional[float] = None,
    noise_var: Optional[float] = None,
) -> EstimateRecord:
    """
    Bias-corrected estimator (-B + sqrt(l) (MA - noise term)) / (sqrt(l) (1 + A(p, q))).

    Args:
        series: Observed series
        plan: Grid plan
        bias: Use this B instead of estimating it
        noise_var: Known noise variance for the level term; estimated when omitted

    Returns:
        EstimateRecord named ``final`` with B and block diagnostics
    """
    factor = _attenuation(plan)
    if noise_var is None:
        noise_var = noise_var_hat(series)
    diagnostics = {"a_pq": factor - 1.0, "noise_var": noise_var}
    if bias is None:
        bias, bias_diag = bias_correction(series, plan)
        diagnostics.update(bias_diag.as_dict())
    root_ell = math.sqrt(plan.ell)
    value = (-bias + root_ell * _noise_corrected_ma(series, plan, noise_var)) / (root_ell * factor)
    diagnostics["bias"] = bias
    return EstimateRecord(
        "final", value,
        tuning={"p": plan.p, "q": plan.q, "ell": plan.ell, "d1": plan.d1, "n": plan.n},
        diagnostics=diagnostics,
    )
