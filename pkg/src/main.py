#!/usr/bin/env python3
"""
Endogenous-Time Volatility Toolkit

Integrated-volatility estimation for noisy prices sampled at endogenous times.

Subcommands:
- simulate: write simulated tick files for one of the three designs
- estimate: run the estimators on a tick file
- benchmark: Monte Carlo comparison of all six estimators
- report: render a finished benchmark as Markdown and HTML
"""

import os
import sys
import argparse
import logging
from dataclasses import dataclass, asdict, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import (
    N_NOMINAL, NOISE_SD, FINE_FACTOR, P_DEFAULT, Q_DEFAULT, D1_DEFAULT,
    PATHS_DEFAULT, SEED_DEFAULT, DEFAULT_WORKERS, WORKERS_ENV, OUTPUT_DIR, ESTIMATOR_NAMES,
    load_defaults_file,
)
from src.core import (
    NoiseSpec, LamaError, DataError, EstimatorError, ConfigError,
    read_tick_file, write_tick_file,
)
from src.simulate import Design, DesignConfig, simulate_design_path, sampling_summary
from src.lama import GridPlan, build_grid_plan
from src.bench import run_design, evaluate_estimators, distribution_report
from src.reporter import (
    config_comment, write_manifest, generate_report, generate_summary, write_run_report,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ESTIMATOR = 4

logger = logging.getLogger(__name__)

# Estimators that need a grid plan
PLANNED_ESTIMATORS = ("uncorrected", "final")


def default_workers() -> int:
    """Worker count from the environment, else the CPU count."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return DEFAULT_WORKERS
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        logger.warning("ignoring %s=%r; expected a positive integer", WORKERS_ENV, raw)
        return DEFAULT_WORKERS
    return value


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one CLI invocation."""

    command: str
    design: Design = Design.BB_HIT
    paths: int = PATHS_DEFAULT
    seed: int = SEED_DEFAULT
    n: Optional[int] = None
    p: int = P_DEFAULT
    q: int = Q_DEFAULT
    d1: int = D1_DEFAULT
    fine_factor: int = FINE_FACTOR
    noise_sd: float = NOISE_SD
    continuity_correction: bool = False
    msrv_noise_t2: bool = False
    estimators: tuple = ESTIMATOR_NAMES
    workers: int = field(default_factory=default_workers)
    out: Optional[Path] = None
    input: Optional[Path] = None
    distributions: tuple = ("final",)

    def __post_init__(self) -> None:
        object.__setattr__(self, "design", Design(self.design))
        if self.paths < 1:
            raise ConfigError(f"paths >= 1 violated: paths={self.paths}")
        if self.workers < 1:
            raise ConfigError(f"workers >= 1 violated: workers={self.workers}")
        unknown = [e for e in (*self.estimators, *self.distributions) if e not in ESTIMATOR_NAMES]
        if unknown:
            raise ConfigError(f"unknown estimator(s): {', '.join(unknown)}")

    @property
    def nominal_n(self) -> int:
        return N_NOMINAL if self.n is None else self.n

    @property
    def output_dir(self) -> Path:
        if self.out is not None:
            return Path(self.out)
        return OUTPUT_DIR / self.design.value

    def design_config(self) -> DesignConfig:
        return DesignConfig(
            design=self.design,
            n=self.nominal_n,
            poisson_rate=float(self.nominal_n),
            fine_factor=self.fine_factor,
            bridge_crossing=not self.continuity_correction,
            continuity_correction=self.continuity_correction,
            noise=NoiseSpec(self.noise_sd),
        )

    def estimator_options(self) -> dict:
        return {"msrv": {"sparse_t2": False}} if self.msrv_noise_t2 else {}

    def grid_plan(self) -> GridPlan:
        plan = GridPlan(n=self.nominal_n, p=self.p, q=self.q, d1=self.d1)
        if plan.ell < 2:
            raise ConfigError(f"l >= 2 violated: l={plan.ell}")
        return plan

    def as_dict(self) -> dict:
        values = asdict(self)
        values["design"] = self.design.value
        values["n"] = self.nominal_n
        values["estimators"] = ",".join(self.estimators)
        values["distributions"] = ",".join(self.distributions)
        for key in ("out", "input"):
            values[key] = str(values[key]) if values[key] is not None else None
        return values


def _parse_bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


# Flag name -> converter, for values read from a defaults file
_CONVERTERS = {
    "design": str,
    "paths": int,
    "seed": int,
    "n": int,
    "p": int,
    "q": int,
    "d1": int,
    "fine_factor": int,
    "noise_sd": float,
    "continuity_correction": _parse_bool,
    "msrv_noise_t2": _parse_bool,
    "estimators": str,
    "workers": int,
    "out": Path,
    "distributions": str,
}


def _split_names(value: str) -> tuple:
    return tuple(name.strip() for name in value.split(",") if name.strip())


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge flags, the optional defaults file and config.py constants.

    Flags win over the file; the file wins over the constants.
    """
    file_values = {}
    if getattr(args, "config", None):
        try:
            raw = load_defaults_file(args.config)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read defaults file: {e}") from None
        for key, value in raw.items():
            if key not in _CONVERTERS:
                raise ConfigError(f"unknown key {key!r} in {args.config}")
            try:
                file_values[key] = _CONVERTERS[key](value)
            except ValueError:
                raise ConfigError(f"bad value for {key!r} in {args.config}: {value!r}") from None

    resolved = {}
    for key in _CONVERTERS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
    for key in ("estimators", "distributions"):
        if key in resolved:
            resolved[key] = _split_names(resolved[key])
    if "design" in resolved:
        try:
            resolved["design"] = Design(resolved["design"])
        except ValueError:
            raise ConfigError(f"unknown design {resolved['design']!r}") from None
    if getattr(args, "input", None) is not None:
        resolved["input"] = Path(args.input)
    return RunConfig(command=args.command, **resolved)


def _banner(title: str) -> None:
    print(f"Endogenous-Time Volatility Toolkit: {title}")
    print(f"=" * 40)
    print(f"Started at: {datetime.now(timezone.utc).isoformat()}")
    print()


def _completed() -> None:
    print()
    print(f"Completed at: {datetime.now(timezone.utc).isoformat()}")


def cmd_simulate(run: RunConfig) -> int:
    """Write one tick file per simulated path plus a key-value manifest."""
    _banner(f"simulate {run.design.value}")
    config = run.design_config()
    out = run.output_dir
    comment = config_comment(run.as_dict())[2:]
    q_prime = config.q_prime if config.design.uses_hitting else None

    print(f"Step 1: Simulating {run.paths} path(s), seed {run.seed}...")
    manifest = {"design": run.design.value, "paths": run.paths, "master_seed": run.seed}
    manifest.update({f"config.{k}": v for k, v in config.as_dict().items()})
    for i in range(run.paths):
        _, series, info = simulate_design_path(config, run.seed, i)
        path = write_tick_file(series, out / f"path_{i:04d}.csv", comment=comment)
        summary = sampling_summary(series, q_prime)
        prefix = f"path_{i:04d}"
        manifest[f"{prefix}.file"] = path.name
        manifest[f"{prefix}.noise_seed"] = info["noise_seed"]
        manifest[f"{prefix}.true_iv"] = info["true_iv"]
        manifest[f"{prefix}.n_increments"] = info["n_increments"]
        manifest[f"{prefix}.merged_arrivals"] = info["merged_arrivals"]
        manifest[f"{prefix}.mean_duration"] = summary["mean_duration"]
        if "upper_exit_fraction" in info:
            manifest[f"{prefix}.upper_exit_fraction"] = info["upper_exit_fraction"]
        if "sparse_mean_duration" in summary:
            manifest[f"{prefix}.sparse_mean_duration"] = summary["sparse_mean_duration"]
        print(f"  {path.name}: N1={info['n_increments']}, true IV={info['true_iv']:.6e}")

    print()
    print("Step 2: Writing manifest...")
    manifest_path = write_manifest(out / "manifest.txt", manifest, run.as_dict())
    print(f"  Manifest: {manifest_path}")
    _completed()
    return EXIT_OK


def format_records(records: dict, errors: dict, names) -> str:
    """Key-value blocks, one per estimator, in the requested order."""
    lines = []
    for name in names:
        lines.append(f"[{name}]")
        if name in records:
            record = records[name]
            lines.append(f"value = {record.value!r}")
            lines += [f"tuning.{k} = {v}" for k, v in record.tuning.items()]
            lines += [f"diagnostics.{k} = {v}" for k, v in record.diagnostics.items()]
        else:
            lines.append(f"error = {errors[name]}")
        lines.append("")
    return "\n".join(lines)


def cmd_estimate(run: RunConfig) -> int:
    """Run the selected estimators on a tick file and print key-value blocks."""
    if run.input is None:
        raise ConfigError("estimate needs an input tick file")
    series = read_tick_file(run.input)
    plan, plan_errors = None, {}
    planned = [name for name in run.estimators if name in PLANNED_ESTIMATORS]
    if planned:
        try:
            plan = build_grid_plan(series, p=run.p, q=run.q, d1=run.d1, n_override=run.n)
        except ConfigError as e:
            logger.warning("no grid plan for %s: %s", ", ".join(planned), e)
            plan_errors = {name: str(e) for name in planned}
    names = [name for name in run.estimators if name not in plan_errors]
    records, errors = evaluate_estimators(series, plan, names, run.estimator_options())
    errors.update(plan_errors)
    text = format_records(records, errors, run.estimators)
    print(text, end="")
    if run.out is not None:
        out = Path(run.out)
        out.mkdir(parents=True, exist_ok=True)
        target = out / f"{run.input.stem}.estimates.txt"
        target.write_text(config_comment(run.as_dict()) + "\n" + text, encoding="utf-8")
        logger.info("wrote %s", target)
    return EXIT_ESTIMATOR if errors else EXIT_OK


def cmd_benchmark(run: RunConfig) -> int:
    """Run the Monte Carlo comparison and write metrics, estimates, distributions and manifest."""
    _banner(f"benchmark {run.design.value}")
    config = run.design_config()
    plan = run.grid_plan()

    print(f"Step 1: Running {run.paths} path(s) on {run.workers} worker(s)...")
    report = run_design(
        config, plan, run.paths, run.seed,
        workers=run.workers, names=run.estimators, options=run.estimator_options(),
    )
    invalid = [row.name for row in report.rows if row.invalid]
    print(f"  Done in {report.wall_time:.1f}s")

    print()
    print("Step 2: Distribution checks...")
    distributions = []
    for name in run.distributions:
        if name not in run.estimators:
            continue
        try:
            distributions.append(distribution_report(report, name))
            print(f"  {name}: skewness={distributions[-1].skewness:.3f}, "
                  f"excess kurtosis={distributions[-1].excess_kurtosis:.3f}")
        except DataError as e:
            print(f"  {name}: skipped ({e})")

    print()
    print("Step 3: Generating reports...")
    paths = generate_report(report, run.output_dir, tuple(distributions), run.as_dict())
    for role, path in paths.items():
        print(f"  {role}: {path}")

    _completed()
    print()
    print(generate_summary(report))
    if invalid:
        print(f"\nNo valid estimate from: {', '.join(invalid)}")
        return EXIT_ESTIMATOR
    return EXIT_OK


def cmd_report(run: RunConfig) -> int:
    """Render report.md and report.html for a finished benchmark directory."""
    run_dir = run.input if run.input is not None else run.output_dir
    md_path, html_path = write_run_report(run_dir, run.as_dict())
    print(f"  Markdown: {md_path}")
    print(f"  HTML: {html_path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the four subcommands and their shared flags."""
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=str, help="Key-value defaults file; flags override it")
    shared.add_argument("--design", choices=[d.value for d in Design], help="Simulation design (default bb-hit)")
    shared.add_argument("--paths", type=_positive_int, help=f"Number of paths (default {PATHS_DEFAULT})")
    shared.add_argument("--seed", type=int, help=f"Master seed (default {SEED_DEFAULT})")
    shared.add_argument("--n", type=_positive_int, help=f"Nominal frequency n (default {N_NOMINAL}; observed N1 for estimate)")
    shared.add_argument("--p", type=_positive_int, help=f"Local-average width (default {P_DEFAULT})")
    shared.add_argument("--q", type=_positive_int, help=f"Sub-grid count (default {Q_DEFAULT})")
    shared.add_argument("--d1", type=_positive_int, help=f"Bias-correction block length in q-blocks (default {D1_DEFAULT})")
    shared.add_argument("--fine-factor", dest="fine_factor", type=_positive_int, help=f"Fine grid steps per 1/n (default {FINE_FACTOR})")
    shared.add_argument("--noise-sd", dest="noise_sd", type=float, help=f"Noise standard deviation (default {NOISE_SD})")
    shared.add_argument(
        "--continuity-correction", dest="continuity_correction", action="store_const", const=True,
        help="Monitor barriers on the fine grid only, shifted inward by the expected overshoot",
    )
    shared.add_argument(
        "--msrv-noise-t2", dest="msrv_noise_t2", action="store_const", const=True,
        help="Take the MSRV T2 term from the noise variance instead of the sparse RV",
    )
    shared.add_argument("--estimators", type=str, help="Comma-separated estimators (default all)")
    shared.add_argument("--distributions", type=str, help="Comma-separated estimators to write distribution files for")
    shared.add_argument("--workers", type=_positive_int, help="Worker processes (default $LAMA_WORKERS or CPU count)")
    shared.add_argument("--out", type=Path, help="Output directory")
    shared.add_argument("--verbose", "-v", action="store_true", help="Log progress and tuning values")

    parser = argparse.ArgumentParser(
        description="Integrated-volatility estimation under endogenous sampling times and microstructure noise"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[shared], help="Write simulated tick files")
    estimate = sub.add_parser("estimate", parents=[shared], help="Estimate integrated volatility from a tick file")
    estimate.add_argument("input", type=str, help="Tick file with a 'time,price' header")
    sub.add_parser("benchmark", parents=[shared], help="Monte Carlo comparison of all estimators")
    report = sub.add_parser("report", parents=[shared], help="Render a finished benchmark directory")
    report.add_argument("input", nargs="?", type=str, help="Benchmark directory (default --out)")
    return parser


def cli(argv=None) -> int:
    """Command-line interface; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run = resolve_config(args)
        return COMMANDS[run.command](run)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except EstimatorError as e:
        print(f"estimator error: {e}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except LamaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(cli())
