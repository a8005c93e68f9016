"""Command-line driver: fit, predict, cluster and report subcommands.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 partial
failure (run summary written). Diagnostic verbosity is controlled by
the EPISIRD_LOG environment variable (error/warn/info/debug).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import __version__, clustering, estimation, ingest, prediction

log = logging.getLogger("episird")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

R0_BINS = ("effectively_zero", "(0,0.5]", "(0.5,1]", "(1,1.5]", "(1.5,2]", ">2")
DEFAULT_ZERO_THRESHOLD = 0.05


def _setup_logging() -> None:
    level = os.environ.get("EPISIRD_LOG", "warn").lower()
    numeric = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}.get(
                   level, logging.WARNING)
    logging.basicConfig(level=numeric,
                        format="%(levelname)s %(name)s: %(message)s")


class CliError(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def load_config_file(path) -> dict:
    """Parse a TOML-style key = value file (comments with #)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(
                    f"{path}:{line_no}: expected key = value", EXIT_USAGE)
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value.strip("\"'")
    return values


_CONFIG_KEYS = {
    "data": str, "populations": str, "out": str, "format": str,
    "window": int, "smooth_factor": float, "median": str,
    "horizon": int, "level": float, "regions": str,
    "steps_per_day": int, "align": str, "jobs": int,
    "trim": float, "zero_threshold": float,
}


def resolve_options(config_path, cli_values: dict) -> dict:
    """Merge config-file values with flag overrides (flags win)."""
    merged = dict(cli_values)
    if config_path:
        try:
            file_values = load_config_file(config_path)
        except OSError as exc:
            raise CliError(str(exc), EXIT_USAGE) from exc
        for key, raw in file_values.items():
            if key not in _CONFIG_KEYS:
                raise CliError(f"unknown config key {key!r}", EXIT_USAGE)
            if cli_values.get(key) is None:
                try:
                    merged[key] = _CONFIG_KEYS[key](raw)
                except ValueError as exc:
                    raise CliError(
                        f"bad value for {key}: {raw!r}", EXIT_USAGE) from exc
    return merged


def _config_hash(options: dict) -> str:
    blob = json.dumps({k: v for k, v in sorted(options.items())},
                      default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fit_config(opts: dict) -> estimation.FitConfig:
    try:
        return estimation.FitConfig(
            window=opts["window"],
            smooth_factor=opts["smooth_factor"],
            median_mode=opts["median"],
            steps_per_day=opts["steps_per_day"],
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _load_regions(opts: dict) -> dict[str, ingest.RegionSeries]:
    """Parse, filter and clean the input data; returns clean series and
    stashes the clean report on the returned dict under a side channel."""
    try:
        tables = ingest.parse_input(opts["data"], opts["format"])
        populations = ingest.load_populations(opts["populations"])
    except (OSError, ingest.IngestError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc

    wanted = None
    if opts.get("regions"):
        wanted = {code.strip().upper()
                  for code in opts["regions"].split(",") if code.strip()}
        unknown = wanted - ingest.REGION_CODES
        if unknown:
            raise CliError(
                f"unknown region codes: {', '.join(sorted(unknown))}",
                EXIT_USAGE)
        tables = {c: t for c, t in tables.items() if c in wanted}
    if not tables:
        raise CliError("no regions selected", EXIT_USAGE)

    report = ingest.CleanReport()
    series: dict[str, ingest.RegionSeries] = {}
    for code in sorted(tables):
        if code not in populations:
            report.skip(code, "no population entry")
            log.warning("region %s skipped: no population entry", code)
            continue
        cleaned, _ = ingest.clean(tables[code], populations[code], report)
        if cleaned is not None:
            series[code] = cleaned
    if not series:
        raise CliError("no usable regions after cleaning", EXIT_DATA)
    series["__clean_report__"] = report  # type: ignore[assignment]
    return series


def _pop_report(series: dict) -> ingest.CleanReport:
    return series.pop("__clean_report__")


def _write_summary(out_dir: Path, command: str, opts: dict,
                   statuses: dict, started: float,
                   extras: dict | None = None) -> None:
    summary = {
        "tool": "episird",
        "version": __version__,
        "command": command,
        "config_hash": _config_hash(opts),
        "regions": statuses,
        "wall_time_seconds": round(time.monotonic() - started, 3),
    }
    if extras:
        summary.update(extras)
    with open(out_dir / "run_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_fit(opts: dict, out_dir: Path, started: float
             ) -> tuple[dict[str, estimation.EstimateSeries], dict, int]:
    config = _fit_config(opts)
    series = _load_regions(opts)
    report = _pop_report(series)
    report.write_jsonl(out_dir / "clean_report.jsonl")
    for code, reason in report.skipped:
        log.warning("region %s skipped: %s", code, reason)

    statuses = {code: "skipped: " + reason for code, reason in report.skipped}
    estimates: dict[str, estimation.EstimateSeries] = {}

    def fit_one(code):
        return code, estimation.fit_region(series[code], config)

    jobs = max(1, opts.get("jobs") or 1)
    results = []
    if jobs == 1:
        for code in sorted(series):
            try:
                results.append(fit_one(code))
            except ValueError as exc:
                results.append((code, exc))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {code: pool.submit(fit_one, code)
                       for code in sorted(series)}
            for code, fut in futures.items():
                try:
                    results.append(fut.result())
                except ValueError as exc:
                    results.append((code, exc))

    failures = 0
    for code, result in sorted(results):
        if isinstance(result, Exception):
            statuses[code] = f"failed: {result}"
            log.error("region %s failed: %s", code, result)
            failures += 1
            continue
        estimation.write_estimates_csv(result, out_dir / f"estimates_{code}.csv")
        estimates[code] = result
        statuses[code] = "ok"
        if any(result.saturated):
            statuses[code] = "ok (grid bound saturated on some dates)"
            log.warning("region %s: minimizer on a grid bound", code)
    exit_code = EXIT_PARTIAL if failures else EXIT_OK
    return estimates, statuses, exit_code


def _load_or_fit(opts: dict, out_dir: Path, started: float):
    """Reuse estimates CSVs in the output directory, else run the fit."""
    existing = sorted(out_dir.glob("estimates_*.csv"))
    wanted = None
    if opts.get("regions"):
        wanted = {c.strip().upper() for c in opts["regions"].split(",")}
    if existing:
        estimates = {}
        for path in existing:
            est = estimation.read_estimates_csv(path)
            if wanted is None or est.region_code in wanted:
                estimates[est.region_code] = est
        if estimates:
            return estimates, {c: "loaded" for c in estimates}, EXIT_OK
    return _run_fit(opts, out_dir, started)


def _out_dir(opts: dict) -> Path:
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory: {exc}", EXIT_USAGE)
    return out


_common_options = [
    click.option("--data", type=click.Path(exists=True, dir_okay=False),
                 required=False, help="input case-count CSV"),
    click.option("--populations", type=click.Path(exists=True, dir_okay=False),
                 required=False, help="region,population CSV"),
    click.option("--out", type=click.Path(file_okay=False), required=False,
                 help="output directory"),
    click.option("--config", "config_path",
                 type=click.Path(exists=True, dir_okay=False),
                 help="TOML-style key=value config file"),
    click.option("--format", "format", default=None,
                 type=click.Choice(["long-csv", "wide-csv"]),
                 help="input file layout (default long-csv)"),
    click.option("--window", type=int, default=None,
                 help="fit window length in days (default 7)"),
    click.option("--smooth-factor", type=float, default=None,
                 help="geometric smoothing ratio (default 0.75)"),
    click.option("--median", default=None,
                 help="robust R0 mode: rolling7|rolling14|cumulative"),
    click.option("--regions", default=None,
                 help="comma-separated region codes to process"),
    click.option("--steps-per-day", type=int, default=None,
                 help="RK4 steps per day (default 10)"),
    click.option("--jobs", type=int, default=None,
                 help="worker pool width (default 1)"),
]


def common_options(fn):
    for opt in reversed(_common_options):
        fn = opt(fn)
    return fn


_DEFAULTS = {
    "format": "long-csv", "window": 7, "smooth_factor": 0.75,
    "median": "rolling7", "horizon": 7, "level": 0.99,
    "steps_per_day": 10, "align": "intersect", "jobs": 1,
    "trim": 0.0, "zero_threshold": DEFAULT_ZERO_THRESHOLD,
}


def _finalize(opts: dict) -> dict:
    for key, default in _DEFAULTS.items():
        if opts.get(key) is None:
            opts[key] = default
    for key in ("data", "populations", "out"):
        if key in opts and opts[key] is None:
            raise CliError(f"missing required option --{key}", EXIT_USAGE)
    return opts


@click.group()
@click.version_option(version=__version__, prog_name="episird")
def main():
    """Dynamic SIR(D) fitting, forecasting and clustering."""
    _setup_logging()


@main.command("fit")
@common_options
def cmd_fit(config_path, **cli_values):
    """Fit per-day SIR(D) parameters for every region."""
    started = time.monotonic()
    opts = _finalize(resolve_options(config_path, cli_values))
    out_dir = _out_dir(opts)
    _, statuses, exit_code = _run_fit(opts, out_dir, started)
    _write_summary(out_dir, "fit", opts, statuses, started)
    raise SystemExit(exit_code)


@main.command("predict")
@common_options
@click.option("--horizon", type=int, default=None,
              help="forecast horizon in days (default 7)")
@click.option("--level", type=float, default=None,
              help="band coverage probability (default 0.99)")
@click.option("--trim", type=float, default=None,
              help="fraction trimmed from each tail of the error pool")
def cmd_predict(config_path, **cli_values):
    """Forecast daily counts with empirical prediction bands."""
    started = time.monotonic()
    opts = _finalize(resolve_options(config_path, cli_values))
    out_dir = _out_dir(opts)
    estimates, statuses, exit_code = _load_or_fit(opts, out_dir, started)

    series = _load_regions(opts)
    _pop_report(series)
    peaks = {}
    for code, est in sorted(estimates.items()):
        if code not in series:
            statuses[code] = "failed: no observation data"
            exit_code = EXIT_PARTIAL
            continue
        try:
            fc = prediction.long_term(
                series[code], est, horizon=opts["horizon"],
                level=opts["level"], steps_per_day=opts["steps_per_day"],
                trim=opts["trim"])
        except ValueError as exc:
            statuses[code] = f"failed: {exc}"
            log.error("region %s: %s", code, exc)
            exit_code = EXIT_PARTIAL
            continue
        prediction.write_forecast_csv(fc, out_dir / f"forecast_{code}.csv")
        statuses[code] = "ok" if fc.has_bands else "ok (no bands: too few errors)"
        if fc.peak_date is not None:
            peaks[code] = {"date": fc.peak_date.isoformat(),
                           "daily_infections": fc.peak_height}
    _write_summary(out_dir, "predict", opts, statuses, started,
                   extras={"peaks": peaks, "level": opts["level"],
                           "horizon": opts["horizon"]})
    raise SystemExit(exit_code)


@main.command("cluster")
@common_options
@click.option("--align", "align", default=None,
              type=click.Choice(["intersect", "pad"]),
              help="date alignment policy (default intersect)")
def cmd_cluster(config_path, **cli_values):
    """Cluster regions by their robust R0 time series (Ward linkage)."""
    started = time.monotonic()
    opts = _finalize(resolve_options(config_path, cli_values))
    out_dir = _out_dir(opts)
    estimates, statuses, exit_code = _load_or_fit(opts, out_dir, started)
    if len(estimates) < 2:
        raise CliError("clustering needs at least 2 fitted regions", EXIT_DATA)
    try:
        matrix = clustering.align(estimates, policy=opts["align"])
        dendrogram = clustering.ward_cluster(matrix)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    (out_dir / "dendrogram.json").write_text(dendrogram.to_json() + "\n",
                                             encoding="utf-8")
    (out_dir / "dendrogram.newick").write_text(dendrogram.to_newick() + "\n",
                                               encoding="utf-8")
    _write_summary(out_dir, "cluster", opts, statuses, started,
                   extras={"merges": len(dendrogram.merges),
                           "aligned_dates": len(matrix.dates)})
    raise SystemExit(exit_code)


def bin_label(r0: float, zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> str:
    """Frequency-table bucket for a latest robust R0 value."""
    if math.isnan(r0) or r0 < zero_threshold:
        return "effectively_zero"
    if r0 <= 0.5:
        return "(0,0.5]"
    if r0 <= 1.0:
        return "(0.5,1]"
    if r0 <= 1.5:
        return "(1,1.5]"
    if r0 <= 2.0:
        return "(1.5,2]"
    return ">2"


@main.command("report")
@common_options
@click.option("--zero-threshold", type=float, default=None,
              help="R0 below this counts as effectively zero (default 0.05)")
def cmd_report(config_path, **cli_values):
    """Summarize latest robust R0 per region with a binned frequency table."""
    started = time.monotonic()
    opts = _finalize(resolve_options(config_path, cli_values))
    out_dir = _out_dir(opts)
    estimates, statuses, exit_code = _load_or_fit(opts, out_dir, started)

    regions = {}
    counts = {label: 0 for label in R0_BINS}
    for code, est in sorted(estimates.items()):
        r0 = float(est.r0_robust[-1])
        label = bin_label(r0, opts["zero_threshold"])
        counts[label] += 1
        regions[code] = {
            "date": est.dates[-1].isoformat(),
            "r0_robust": None if math.isnan(r0) else round(r0, 6),
            "bin": label,
        }
    report = {
        "zero_threshold": opts["zero_threshold"],
        "regions": regions,
        "bins": counts,
        "total": len(regions),
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "r0_bins.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "count"])
        for label in R0_BINS:
            writer.writerow([label, counts[label]])
    _write_summary(out_dir, "report", opts, statuses, started,
                   extras={"bins": counts})
    raise SystemExit(exit_code)


if __name__ == "__main__":
    main()
