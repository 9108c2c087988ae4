"""Write benchmark and simulation results as delimited text, manifests and Markdown/HTML reports."""

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import markdown

import sys
sys.path.insert(0, str(__file__).rsplit("/", 2)[0])
from config import OUTPUT_DIR
from src.core import DataError
from src.bench import BenchmarkReport, DistributionReport, TABLE_LABELS

METRICS_FILE = "metrics.csv"
ESTIMATES_FILE = "estimates.csv"
MANIFEST_FILE = "manifest.txt"

METRIC_FIELDS = ["estimator", "label", "rmse", "bias", "sd", "valid", "failed", "invalid"]


def config_comment(run_config: dict) -> str:
    """The first line of every output file: the resolved configuration as compact JSON."""
    return "# " + json.dumps(run_config, sort_keys=True, default=str, separators=(",", ":"))


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(path: Path, entries: dict, run_config: dict) -> Path:
    """
    Write a ``key = value`` manifest.

    Args:
        path: Destination file
        entries: Ordered keys and values; floats are written with full precision
        run_config: Resolved configuration for the comment line

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(config_comment(run_config) + "\n")
        for key, value in entries.items():
            f.write(f"{key} = {_format(value)}\n")
    return path


def read_manifest(path: Path) -> dict:
    """Parse a manifest written by ``write_manifest``; values stay strings."""
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if " = " not in line:
                raise DataError(f"expected 'key = value' in {path}", lineno)
            key, value = line.split(" = ", 1)
            entries[key] = value
    return entries


def _write_table(path: Path, fieldnames: list, rows: list, run_config: dict) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(config_comment(run_config) + "\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows({k: _format(v) for k, v in row.items()} for row in rows)
    return path


def _read_table(path: Path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def metric_rows(report: BenchmarkReport) -> list[dict]:
    """Metrics rows in table column order."""
    order = [name for name in TABLE_LABELS if any(r.name == name for r in report.rows)]
    rows = []
    for name in order:
        row = report.row(name)
        rows.append({
            "estimator": name,
            "label": TABLE_LABELS[name],
            "rmse": None if row.invalid else row.rmse,
            "bias": None if row.invalid else row.bias,
            "sd": row.sd,
            "valid": row.valid,
            "failed": row.failed,
            "invalid": row.invalid,
        })
    return rows


def write_distribution(dist: DistributionReport, path: Path, run_config: dict) -> Path:
    """
    One distribution file: moment rows, then histogram bins, then QQ pairs.

    Every row is ``kind,x,y``: ``moment`` rows carry (name, value), ``bin``
    rows (left edge, count) with the final ``edge`` row closing the last bin,
    and ``qq`` rows (theoretical, empirical) standard-normal quantiles.
    """
    rows = [
        {"kind": "moment", "x": "count", "y": dist.count},
        {"kind": "moment", "x": "mean", "y": dist.mean},
        {"kind": "moment", "x": "sd", "y": dist.sd},
        {"kind": "moment", "x": "skewness", "y": dist.skewness},
        {"kind": "moment", "x": "excess_kurtosis", "y": dist.excess_kurtosis},
    ]
    for left, count in zip(dist.bin_edges[:-1], dist.counts):
        rows.append({"kind": "bin", "x": float(left), "y": int(count)})
    rows.append({"kind": "edge", "x": float(dist.bin_edges[-1]), "y": None})
    for theo, emp in zip(dist.qq_theoretical, dist.qq_empirical):
        rows.append({"kind": "qq", "x": float(theo), "y": float(emp)})
    return _write_table(path, ["kind", "x", "y"], rows, run_config)


def generate_report(
    report: BenchmarkReport,
    output_dir: Optional[Path] = None,
    distributions: tuple = (),
    run_config: Optional[dict] = None,
) -> dict[str, Path]:
    """
    Write the metrics, per-path estimates, distribution files and manifest of a run.

    Args:
        report: Finished benchmark
        output_dir: Directory to write into (defaults to config OUTPUT_DIR)
        distributions: DistributionReports to write, one file each
        run_config: Resolved configuration for the comment lines

    Returns:
        Dict of file role to written path
    """
    if output_dir is None:
        output_dir = OUTPUT_DIR
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if run_config is None:
        run_config = {"design": report.config, "plan": report.plan, "seed": report.master_seed}

    paths = {}
    paths["metrics"] = _write_table(output_dir / METRICS_FILE, METRIC_FIELDS, metric_rows(report), run_config)

    names = [row.name for row in report.rows]
    estimate_rows = []
    for result in report.path_results:
        entry = {
            "path_index": result.path_index,
            "noise_seed": result.noise_seed,
            "true_iv": result.true_iv,
            "n_increments": result.n_increments,
        }
        entry.update({name: result.estimates.get(name) for name in names})
        estimate_rows.append(entry)
    paths["estimates"] = _write_table(
        output_dir / ESTIMATES_FILE,
        ["path_index", "noise_seed", "true_iv", "n_increments", *names],
        estimate_rows,
        run_config,
    )

    for dist in distributions:
        paths[f"distribution_{dist.name}"] = write_distribution(
            dist, output_dir / f"distribution_{dist.name}.csv", run_config
        )

    manifest = {
        "design": report.design,
        "paths": report.paths,
        "master_seed": report.master_seed,
        "path_failures": report.path_failures,
        "wall_time": round(report.wall_time, 3),
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    manifest.update({f"config.{k}": v for k, v in report.config.items()})
    manifest.update({f"plan.{k}": v for k, v in report.plan.items()})
    paths["manifest"] = write_manifest(output_dir / MANIFEST_FILE, manifest, run_config)
    return paths


def generate_summary(report: BenchmarkReport) -> str:
    """
    Generate a text summary of a benchmark run.

    Args:
        report: Finished benchmark

    Returns:
        Summary string
    """
    lines = [
        f"Benchmark Summary ({report.design})",
        f"=" * 40,
        f"Paths: {report.paths} (failed to simulate: {report.path_failures})",
        f"Wall time: {report.wall_time:.1f}s",
        "",
        f"{'Estimator':<15}{'RMSE':>13}{'Bias':>13}{'s.d.':>13}{'valid':>7}",
    ]
    for row in metric_rows(report):
        if row["invalid"]:
            lines.append(f"{row['label']:<15}{'invalid':>13}")
            continue
        sd = f"{row['sd']:.3e}" if row["sd"] is not None else "-"
        lines.append(f"{row['label']:<15}{row['rmse']:>13.3e}{row['bias']:>13.3e}{sd:>13}{row['valid']:>7}")
    return "\n".join(lines)


def _cell(value: str) -> str:
    if value == "":
        return "–"
    return f"{float(value):.3e}"


def render_markdown(run_dir: Path) -> str:
    """
    Markdown table of a finished benchmark directory: one column per estimator,
    one row per statistic.
    """
    run_dir = Path(run_dir)
    metrics_path = run_dir / METRICS_FILE
    if not metrics_path.exists():
        raise DataError(f"{metrics_path} not found; run a benchmark first")
    rows = _read_table(metrics_path)
    manifest = read_manifest(run_dir / MANIFEST_FILE) if (run_dir / MANIFEST_FILE).exists() else {}

    labels = [r["label"] for r in rows]
    out = [
        f"# Benchmark: {manifest.get('design', run_dir.name)}",
        "",
        f"Paths: {manifest.get('paths', '?')}, seed: {manifest.get('master_seed', '?')}",
        "",
        "| | " + " | ".join(labels) + " |",
        "|---|" + "---|" * len(labels),
        "| RMSE | " + " | ".join(_cell(r["rmse"]) for r in rows) + " |",
        "| Sample bias | " + " | ".join(_cell(r["bias"]) for r in rows) + " |",
    ]
    if any(r["sd"] for r in rows):
        out.append("| Sample s.d. | " + " | ".join(_cell(r["sd"]) for r in rows) + " |")
    out.append("| Valid paths | " + " | ".join(r["valid"] for r in rows) + " |")

    settings = {k: v for k, v in manifest.items() if k.startswith(("config.", "plan."))}
    if settings:
        out += ["", "## Settings", ""]
        out += [f"- `{k}` = {v}" for k, v in settings.items()]
    return "\n".join(out) + "\n"


def render_html(md_text: str, title: str) -> str:
    """Standalone HTML page for a Markdown report."""
    body = markdown.markdown(md_text, extensions=["extra", "tables"], output_format="html5")
    return (
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{title}</title>\n"
        "<style>body{font-family:system-ui,sans-serif;max-width:960px;margin:2em auto;}"
        "table{border-collapse:collapse;}th,td{border-bottom:1px solid #ccc;padding:6px 10px;text-align:right;}"
        "</style>\n</head>\n<body>\n"
        f"{body}\n</body>\n</html>\n"
    )


def write_run_report(run_dir: Path, run_config: dict) -> tuple[Path, Path]:
    """
    Render ``report.md`` and ``report.html`` into a finished benchmark directory.

    Returns:
        Tuple of (markdown_path, html_path)
    """
    run_dir = Path(run_dir)
    md_text = render_markdown(run_dir)
    comment = "<!-- " + config_comment(run_config)[2:] + " -->\n"
    md_path = run_dir / "report.md"
    md_path.write_text(comment + md_text, encoding="utf-8")
    html_path = run_dir / "report.html"
    html_path.write_text(comment + render_html(md_text, f"Benchmark {run_dir.name}"), encoding="utf-8")
    return md_path, html_path
