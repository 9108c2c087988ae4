"""Configuration constants for the endogenous-time volatility toolkit."""

import math
import os
from pathlib import Path

# Nominal sampling frequency (ticks per trading day)
N_NOMINAL = 46_800

# Latent price
X0 = math.log(5.0)
SIGMA = 0.02              # Brownian bridge volatility
NOISE_SD = 0.0005         # Microstructure noise standard deviation

# Heston bridge
HESTON_VARTHETA = 0.0004
HESTON_GAMMA = 0.5 / 252
HESTON_KAPPA = 5 / 252
HESTON_RHO = -0.5

# Hitting-time sampling: a = 5 sigma, b = sigma / 10
BARRIER_A_MULT = 5.0
BARRIER_B_MULT = 0.1
ELL_PRIME_EXPONENT = 19 / 21
# Expected overshoot of a grid-monitored barrier, in units of vol * sqrt(step)
OVERSHOOT_BETA = 0.5826

# Poisson sampling
POISSON_RATE = 46_800.0

# Fine simulation grid step is 1 / (FINE_FACTOR * n)
FINE_FACTOR = 20

# Local averaging / moving average tuning
P_DEFAULT = 5
Q_DEFAULT = 20
D1_DEFAULT = 100
F2_FLOOR = 1e-10

# Sparse RV: 5 minutes of a 390-minute trading day
SPARSE_INTERVAL = 5 / 390

# Pre-averaging
PREAVG_THETA_CONST = 4.777

# Monte Carlo
PATHS_DEFAULT = 1_000
SEED_DEFAULT = 20_240_101
WORKERS_ENV = "LAMA_WORKERS"     # overrides the worker count when set to a positive integer
DEFAULT_WORKERS = os.cpu_count() or 1

# Output
OUTPUT_DIR = Path(__file__).parent / "runs"

ESTIMATOR_NAMES = ("tsrv", "msrv", "kernel", "preavg", "uncorrected", "final")


def load_defaults_file(path) -> dict:
    """
    Read a key-value defaults file.

    Lines look like ``q = 20``; ``#`` starts a comment. Values are returned
    as strings and converted by the CLI parser.

    Args:
        path: Path to the file

    Returns:
        Dict mapping key to raw string value
    """
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values
