"""
Latent-path simulation and observation schemes.

Two latent models (Brownian bridge and Heston bridge) are simulated on a
fine regular grid with step 1 / (M n). Observation times come either from
the barrier-hitting scheme (endogenous) or from an independent Poisson
process; noisy prices are read off the latent path at those times.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np
from numba import njit
from scipy.integrate import trapezoid

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import (
    N_NOMINAL, X0, SIGMA, NOISE_SD,
    HESTON_VARTHETA, HESTON_GAMMA, HESTON_KAPPA, HESTON_RHO,
    BARRIER_A_MULT, BARRIER_B_MULT, ELL_PRIME_EXPONENT, OVERSHOOT_BETA,
    POISSON_RATE, FINE_FACTOR,
)
from src.core import TickSeries, NoiseSpec, ConfigError, DataError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

# Independent RNG streams per path
STREAM_LATENT = 0
STREAM_TIMES = 1
STREAM_NOISE = 2


class Design(str, Enum):
    """The three benchmark designs."""

    BB_HIT = "bb-hit"            # Brownian bridge, hitting times
    HESTON_HIT = "heston-hit"    # Heston bridge, hitting times
    BB_POISSON = "bb-poisson"    # Brownian bridge, Poisson times

    @property
    def uses_hitting(self) -> bool:
        return self is not Design.BB_POISSON

    @property
    def constant_truth(self) -> bool:
        return self is not Design.HESTON_HIT


@dataclass(frozen=True)
class DesignConfig:
    """Parameters of one simulation design; defaults are the benchmark values."""

    design: Design = Design.BB_HIT
    n: int = N_NOMINAL
    sigma: float = SIGMA
    x0: float = X0
    vartheta: float = HESTON_VARTHETA
    gamma: float = HESTON_GAMMA
    kappa: float = HESTON_KAPPA
    rho: float = HESTON_RHO
    barrier_a_mult: float = BARRIER_A_MULT
    barrier_b_mult: float = BARRIER_B_MULT
    ell_prime: Optional[int] = None
    poisson_rate: float = POISSON_RATE
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(NOISE_SD))
    fine_factor: int = FINE_FACTOR
    bridge_crossing: bool = True
    continuity_correction: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "design", Design(self.design))
        if self.ell_prime is None:
            object.__setattr__(self, "ell_prime", int(math.floor(self.n ** ELL_PRIME_EXPONENT)))
        if self.n < 1:
            raise ConfigError(f"n >= 1 violated: n={self.n}")
        if self.fine_factor < 1:
            raise ConfigError(f"fine_factor >= 1 violated: M={self.fine_factor}")
        if self.design.uses_hitting and self.fine_factor % 2:
            raise ConfigError(f"hitting designs need an even fine_factor for the 1/(2n) step: M={self.fine_factor}")
        if self.bridge_crossing and self.continuity_correction:
            raise ConfigError("bridge_crossing and continuity_correction are alternatives; pick one")
        if self.sigma < 0.0 or self.vartheta < 0.0:
            raise ConfigError("volatility parameters must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"-1 <= rho <= 1 violated: rho={self.rho}")
        if self.ell_prime < 1 or self.q_prime < 1:
            raise ConfigError(
                f"q_prime = floor(n / ell_prime) >= 1 violated: n={self.n}, ell_prime={self.ell_prime}"
            )
        if self.design.uses_hitting and not (self.barrier_a > 0.0 and self.barrier_b > 0.0):
            raise ConfigError(f"barriers a > 0, b > 0 violated: a={self.barrier_a}, b={self.barrier_b}")
        if self.design.uses_hitting and min(self.up_level, self.down_level) <= 0.0:
            raise ConfigError(
                f"corrected barriers must stay positive: up={self.up_level:.3e}, down={self.down_level:.3e}"
            )
        if self.poisson_rate <= 0.0:
            raise ConfigError(f"poisson_rate > 0 violated: {self.poisson_rate}")
        if self.design is Design.HESTON_HIT and 2 * self.kappa * self.vartheta <= self.gamma ** 2:
            logger.warning("Feller condition 2*kappa*vartheta > gamma^2 fails; variance may hit zero")

    @property
    def q_prime(self) -> int:
        return self.n // self.ell_prime

    @property
    def vol_scale(self) -> float:
        """Volatility unit the barriers and bridge endpoint are quoted in."""
        if self.design is Design.HESTON_HIT:
            return math.sqrt(self.vartheta)
        return self.sigma

    @property
    def barrier_a(self) -> float:
        return self.barrier_a_mult * self.vol_scale

    @property
    def barrier_b(self) -> float:
        return self.barrier_b_mult * self.vol_scale

    @property
    def overshoot(self) -> float:
        """Inward barrier shift applied under the continuity correction."""
        if not self.continuity_correction:
            return 0.0
        return OVERSHOOT_BETA * self.vol_scale * math.sqrt(self.resolution)

    @property
    def up_level(self) -> float:
        return self.barrier_a / math.sqrt(self.ell_prime) - self.overshoot

    @property
    def down_level(self) -> float:
        return self.barrier_b / math.sqrt(self.ell_prime) - self.overshoot

    @property
    def bridge_target(self) -> float:
        return self.x0 + 4.0 * self.vol_scale

    @property
    def resolution(self) -> float:
        return 1.0 / (self.fine_factor * self.n)

    @property
    def grid_size(self) -> int:
        """Number of fine-grid nodes; the last node sits at 1 - resolution."""
        return self.fine_factor * self.n

    @property
    def regular_steps(self) -> int:
        """Fine-grid steps in one regular 1/(2n) observation gap."""
        return max(1, self.fine_factor // 2)

    def as_dict(self) -> dict:
        return {
            "design": self.design.value,
            "n": self.n,
            "sigma": self.sigma,
            "x0": self.x0,
            "vartheta": self.vartheta,
            "gamma": self.gamma,
            "kappa": self.kappa,
            "rho": self.rho,
            "barrier_a": self.barrier_a,
            "barrier_b": self.barrier_b,
            "ell_prime": self.ell_prime,
            "q_prime": self.q_prime,
            "poisson_rate": self.poisson_rate,
            "noise_sd": self.noise.sigma_eps,
            "fine_factor": self.fine_factor,
            "bridge_crossing": self.bridge_crossing,
            "continuity_correction": self.continuity_correction,
        }


@dataclass(frozen=True, eq=False)
class LatentPath:
    """Latent log-price (and, for the Heston bridge, spot variance) on the fine grid."""

    times: np.ndarray
    x: np.ndarray
    resolution: float
    model: str
    v: Optional[np.ndarray] = None
    sigma: Optional[float] = None

    def __post_init__(self) -> None:
        if len(self.times) != len(self.x):
            raise DataError("latent times and values differ in length")
        if self.v is not None:
            if len(self.v) != len(self.x):
                raise DataError("variance path length differs from price path")
            if np.any(self.v < 0.0):
                raise DataError("variance path must be nonnegative")
        for arr in (self.times, self.x, self.v):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.x)


def stream_seed(master_seed: int, path_index: int, stream: int) -> np.random.SeedSequence:
    """Deterministic per-path, per-stream seed; independent of execution order."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(path_index), int(stream)))


def stream_int_seed(master_seed: int, path_index: int, stream: int) -> int:
    return int(stream_seed(master_seed, path_index, stream).generate_state(1, dtype=np.uint64)[0])


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _grid_times(config: DesignConfig) -> np.ndarray:
    return np.arange(config.grid_size) * config.resolution


def simulate_brownian_bridge(config: DesignConfig, seed: SeedLike) -> LatentPath:
    """
    Exact Brownian bridge from X0 to X0 + 4 sigma on the fine grid.

    Uses B_t = W_t - t W_1, which has exactly the bridge's joint law at the
    grid nodes. The node at t = 1 is dropped.

    Args:
        config: Design parameters (sigma, x0, n, fine_factor)
        seed: Seed or generator for the latent stream

    Returns:
        LatentPath with ``v`` unset
    """
    rng = _rng(seed)
    h = config.resolution
    size = config.grid_size
    t_full = np.arange(size + 1) * h
    t_full[-1] = 1.0
    w = np.empty(size + 1)
    w[0] = 0.0
    np.cumsum(rng.standard_normal(size) * math.sqrt(h), out=w[1:])
    bridge = w - t_full * w[-1]
    x = config.x0 + (config.bridge_target - config.x0) * t_full + config.sigma * bridge
    return LatentPath(
        times=t_full[:size].copy(),
        x=x[:size].copy(),
        resolution=h,
        model="brownian_bridge",
        sigma=config.sigma,
    )


@njit(cache=True)
def _heston_euler(x0, v0, target, kappa, vartheta, gamma, rho, h, z1, z2, x, v):
    n = x.shape[0]
    x[0] = x0
    v[0] = v0
    sq_h = math.sqrt(h)
    rho_c = math.sqrt(1.0 - rho * rho)
    for k in range(n - 1):
        t = k * h
        vp = v[k] if v[k] > 0.0 else 0.0
        dw_sigma = z1[k] * sq_h
        dw = rho * dw_sigma + rho_c * z2[k] * sq_h
        v[k + 1] = v[k] + kappa * (vartheta - vp) * h + gamma * math.sqrt(vp) * dw_sigma
        x[k + 1] = x[k] + (target - x[k]) / (1.0 - t) * h + math.sqrt(vp) * dw


def simulate_heston_bridge(config: DesignConfig, seed: SeedLike, v0: Optional[float] = None) -> LatentPath:
    """
    Full-truncation Euler scheme for the Heston bridge ending at X0 + 4 sqrt(vartheta).

    Args:
        config: Design parameters (Heston block, x0, n, fine_factor)
        seed: Seed or generator for the latent stream
        v0: Initial variance; defaults to vartheta

    Returns:
        LatentPath with the truncated variance path in ``v``
    """
    rng = _rng(seed)
    size = config.grid_size
    z1 = rng.standard_normal(size - 1)
    z2 = rng.standard_normal(size - 1)
    x = np.empty(size)
    v = np.empty(size)
    _heston_euler(
        config.x0, config.vartheta if v0 is None else v0, config.bridge_target,
        config.kappa, config.vartheta, config.gamma, config.rho,
        config.resolution, z1, z2, x, v,
    )
    return LatentPath(
        times=_grid_times(config),
        x=x,
        resolution=config.resolution,
        model="heston_bridge",
        v=np.maximum(v, 0.0),
    )


def simulate_path(config: DesignConfig, seed: SeedLike) -> LatentPath:
    if config.design is Design.HESTON_HIT:
        return simulate_heston_bridge(config, seed)
    return simulate_brownian_bridge(config, seed)


@njit(cache=True)
def _crossed(x, k, level, up, down, var_h, u):
    d = x[k] - level
    if d >= up:
        return 1
    if d <= -down:
        return -1
    if var_h[k - 1] <= 0.0:
        return 0
    # Brownian bridge between nodes k-1 and k, both inside the band
    e = x[k - 1] - level
    p_up = math.exp(-2.0 * (up - e) * (up - d) / var_h[k - 1])
    if u[k] < p_up:
        return 1
    if u[k] < p_up + math.exp(-2.0 * (down + e) * (down + d) / var_h[k - 1]):
        return -1
    return 0


@njit(cache=True)
def _hitting_indices(x, up, down, reg, q_prime, var_h, u, out, sides):
    size = x.shape[0]
    count = 0
    for j in range(q_prime + 1):
        idx = j * reg
        if idx >= size:
            return count
        out[count] = idx
        sides[count] = 0
        count += 1
    anchor = q_prime * reg
    while True:
        level = x[anchor]
        hit = -1
        side = 0
        k = anchor + 1
        while k < size:
            side = _crossed(x, k, level, up, down, var_h, u)
            if side != 0:
                hit = k
                break
            k += 1
        if hit < 0:
            return count
        out[count] = hit
        sides[count] = side
        count += 1
        anchor = hit
        for j in range(2, q_prime + 1):
            idx = hit + (j - 1) * reg
            if idx >= size:
                return count
            out[count] = idx
            sides[count] = 0
            count += 1
            anchor = idx


def _step_variance(path: LatentPath, config: DesignConfig) -> np.ndarray:
    """Local variance times the fine step at each node; zero disables bridge checks."""
    if not config.bridge_crossing:
        return np.zeros(len(path))
    if path.v is not None:
        return np.asarray(path.v) * path.resolution
    return np.full(len(path), config.sigma ** 2 * path.resolution)


def hitting_exits(path: LatentPath, config: DesignConfig, seed: SeedLike = 0) -> tuple[np.ndarray, np.ndarray]:
    """
    Fine-grid indices of the hitting-scheme observation times and exit sides.

    With ``config.bridge_crossing`` a barrier crossed between two nodes is
    detected with the Brownian-bridge crossing probability, drawn from
    ``seed``; the observation is the first node after the crossing.

    Returns:
        Tuple of (indices, sides) where sides is +1 or -1 at block-opening
        hits and 0 at regular times
    """
    out = np.empty(len(path), dtype=np.int64)
    sides = np.empty(len(path), dtype=np.int64)
    u = _rng(seed).random(len(path)) if config.bridge_crossing else np.ones(len(path))
    count = _hitting_indices(
        np.asarray(path.x), config.up_level, config.down_level,
        config.regular_steps, config.q_prime, _step_variance(path, config), u, out, sides,
    )
    return out[:count].copy(), sides[:count].copy()


def hitting_indices(path: LatentPath, config: DesignConfig, seed: SeedLike = 0) -> np.ndarray:
    """Fine-grid indices of the hitting-scheme observation times."""
    return hitting_exits(path, config, seed)[0]


def sample_hitting_scheme(path: LatentPath, config: DesignConfig, seed: SeedLike = 0) -> TickSeries:
    """
    Endogenous observation times from barrier hitting.

    The first q'+1 times are regular (step 1/(2n)). Each later block opens
    with the first crossing of +a/sqrt(l') or -b/sqrt(l') from the block
    anchor, observed at the next fine-grid node, followed by q'-1 regular
    steps. The schedule stops at the end of the fine grid.

    Args:
        path: Latent path on the fine grid
        config: Design parameters (barriers, ell_prime, n)
        seed: Seed for the between-node crossing draws

    Returns:
        Noise-free TickSeries of latent prices at the sampled times
    """
    idx = hitting_indices(path, config, seed)
    return TickSeries(path.times[idx], path.x[idx])


def sample_poisson(config: DesignConfig, seed: SeedLike) -> np.ndarray:
    """Time 0 followed by Poisson(rate) arrivals on (0, 1]."""
    rng = _rng(seed)
    rate = config.poisson_rate
    chunk = max(16, int(rate + 6.0 * math.sqrt(rate)) + 16)
    arrivals = []
    last = 0.0
    while last <= 1.0:
        block = last + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        arrivals.append(block)
        last = block[-1]
    arrivals = np.concatenate(arrivals)
    return np.concatenate(([0.0], arrivals[arrivals <= 1.0]))


def snap_to_grid(path: LatentPath, times: np.ndarray) -> tuple[np.ndarray, int]:
    """
    Map arbitrary times to fine-grid nodes.

    Times past the last node are discarded; arrivals falling on an already
    used node are merged into the first one.

    Returns:
        Tuple of (grid times, number of merged arrivals)
    """
    idx = np.rint(np.asarray(times) / path.resolution).astype(np.int64)
    idx = idx[idx < len(path)]
    unique = np.unique(idx)
    return path.times[unique], int(len(idx) - len(unique))


def _grid_index(path: LatentPath, times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    idx = np.rint(times / path.resolution).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= len(path)):
        raise DataError("observation time outside the latent path coverage")
    if np.any(np.abs(idx * path.resolution - times) > 1e-6 * path.resolution):
        raise DataError("observation time is not on the fine grid; snap it first")
    return idx


def observe_with_noise(path: LatentPath, times: np.ndarray, noise: NoiseSpec) -> TickSeries:
    """
    Observed prices Y = X + eps at the given grid times.

    The noise draws come from their own generator seeded by ``noise.seed``,
    so they do not depend on how the latent path was drawn.
    """
    idx = _grid_index(path, times)
    prices = path.x[idx].copy()
    if noise.sigma_eps > 0.0:
        prices += _rng(noise.seed).normal(0.0, noise.sigma_eps, size=len(idx))
    return TickSeries(path.times[idx], prices)


def true_iv(path: LatentPath) -> float:
    """
    Integrated variance of the latent path over [0, 1].

    Brownian bridge: sigma^2. Heston bridge: trapezoidal rule over the fine
    grid, with the last node's value held to the horizon.
    """
    if path.model == "brownian_bridge":
        return float(path.sigma) ** 2
    if path.v is None:
        raise DataError(f"{path.model} path carries no variance array")
    tail = path.v[-1] * (1.0 - path.times[-1])
    return float(trapezoid(path.v, path.times) + tail)


def sampling_summary(series: TickSeries, q_prime: Optional[int] = None) -> dict:
    """
    Duration statistics of a sampled series.

    With ``q_prime`` the sparse (hitting) steps of a hitting-scheme series
    are separated from the regular ones; sparse steps sit at positions
    i q' + 1 for i >= 1.
    """
    durations = np.diff(series.times)
    summary = {
        "n_increments": series.n_increments,
        "mean_duration": float(durations.mean()),
        "max_duration": float(durations.max()),
    }
    if q_prime is not None:
        positions = np.arange(q_prime + 1, series.n_increments + 1, q_prime)
        if len(positions):
            steps = series.prices[positions] - series.prices[positions - 1]
            summary["sparse_count"] = int(len(positions))
            summary["sparse_mean_duration"] = float(durations[positions - 1].mean())
            summary["upper_exit_fraction"] = float(np.mean(steps > 0.0))
    return summary


def simulate_design_path(config: DesignConfig, master_seed: int, path_index: int) -> tuple[LatentPath, TickSeries, dict]:
    """
    One complete observed path of a design.

    Args:
        config: Design parameters
        master_seed: Run-level seed
        path_index: Index of the path within the run

    Returns:
        Tuple of (latent path, observed series, info dict with seeds and counts)
    """
    path = simulate_path(config, stream_seed(master_seed, path_index, STREAM_LATENT))
    merged = 0
    exits = None
    if config.design.uses_hitting:
        idx, sides = hitting_exits(path, config, stream_seed(master_seed, path_index, STREAM_TIMES))
        times = path.times[idx]
        exits = sides[sides != 0]
    else:
        arrivals = sample_poisson(config, stream_seed(master_seed, path_index, STREAM_TIMES))
        times, merged = snap_to_grid(path, arrivals)
    noise = NoiseSpec(config.noise.sigma_eps, stream_int_seed(master_seed, path_index, STREAM_NOISE))
    series = observe_with_noise(path, times, noise)
    info = {
        "path_index": path_index,
        "noise_seed": noise.seed,
        "n_increments": series.n_increments,
        "merged_arrivals": merged,
        "true_iv": true_iv(path),
    }
    if exits is not None and len(exits):
        info["upper_exit_fraction"] = float(np.mean(exits > 0))
    logger.debug("path %d: N1=%d true_iv=%.6e", path_index, series.n_increments, info["true_iv"])
    return path, series, info
