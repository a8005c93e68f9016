"""Parsing and cleaning of per-region daily cumulative case counts.

Two file layouts are accepted:

* long-csv: header ``date,region,confirmed,recovered,deceased``, one row
  per (date, region), cumulative counts.
* wide-csv: the covid19india state-wise daily layout, header
  ``date,status,<CODE>,<CODE>,...`` with status in
  {Confirmed, Recovered, Deceased} and daily new counts per region
  column; the parser accumulates these into cumulative series.
  Aggregate columns (TT, UN, DD) are ignored.

Populations come from a separate CSV with header ``region,population``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .sird_core import IncrementSeries

__all__ = [
    "REGION_CODES",
    "RegionSeries",
    "Repair",
    "CleanReport",
    "IngestError",
    "parse_input",
    "load_populations",
    "clean",
    "observed_increments",
]

# The 36 states and union territories, by their two-letter codes.
REGION_CODES = frozenset({
    "AN", "AP", "AR", "AS", "BR", "CH", "CT", "DL", "DN", "GA", "GJ", "HP",
    "HR", "JH", "JK", "KA", "KL", "LA", "LD", "MH", "ML", "MN", "MP", "MZ",
    "NL", "OR", "PB", "PY", "RJ", "SK", "TG", "TN", "TR", "UP", "UT", "WB",
})

# Non-region aggregate columns present in the upstream wide file.
_WIDE_IGNORED = {"TT", "UN", "DD"}

MIN_USABLE_ROWS = 8


class IngestError(ValueError):
    """Raised for malformed or inconsistent input files."""


@dataclass(frozen=True)
class RegionSeries:
    """Clean daily cumulative counts for one region."""

    region_code: str
    dates: tuple[dt.date, ...]
    confirmed: np.ndarray
    recovered: np.ndarray
    deceased: np.ndarray
    population: float

    def __post_init__(self):
        n = len(self.dates)
        if not (len(self.confirmed) == len(self.recovered)
                == len(self.deceased) == n):
            raise ValueError("count series must align with dates")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def active(self) -> np.ndarray:
        return self.confirmed - self.recovered - self.deceased


@dataclass(frozen=True)
class Repair:
    region: str
    date: dt.date
    variable: str
    original: float
    repaired: float
    rule: str

    def as_json(self) -> str:
        return json.dumps({
            "region": self.region,
            "date": self.date.isoformat(),
            "variable": self.variable,
            "original": self.original,
            "repaired": self.repaired,
            "rule": self.rule,
        }, sort_keys=True)


@dataclass
class CleanReport:
    """Audit trail of every cell changed during cleaning."""

    repairs: list[Repair] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def add(self, repair: Repair) -> None:
        self.repairs.append(repair)

    def skip(self, region: str, reason: str) -> None:
        self.skipped.append((region, reason))

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rep in self.repairs:
                fh.write(rep.as_json() + "\n")


@dataclass
class RawRegionTable:
    """Per-region cumulative counts straight from a file, before cleaning."""

    region_code: str
    rows: list[tuple[dt.date, float, float, float]]


def _parse_date(text: str, line_no: int) -> dt.date:
    text = text.strip()
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        pass
    # the upstream wide file uses e.g. "14-Mar-20"
    for fmt in ("%d-%b-%y", "%d-%b-%Y"):
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise IngestError(f"line {line_no}: unparseable date {text!r}")


def _parse_count(text: str, name: str, line_no: int) -> float:
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        raise IngestError(
            f"line {line_no}: {name} must be an integer, got {text!r}"
        ) from None
    if value < 0:
        # negative raw counts occur upstream; keep them for clean() to fix
        return float(value)
    return float(value)


def parse_input(path, format: str) -> dict[str, RawRegionTable]:
    """Parse a data file into one raw table per region code.

    format is "long-csv" or "wide-csv" (see module docstring).
    """
    if format == "long-csv":
        return _parse_long(path)
    if format == "wide-csv":
        return _parse_wide(path)
    raise IngestError(f"unknown input format {format!r}")


def _parse_long(path) -> dict[str, RawRegionTable]:
    tables: dict[str, RawRegionTable] = {}
    seen: set[tuple[str, dt.date]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty input file") from None
        expected = ["date", "region", "confirmed", "recovered", "deceased"]
        if [h.strip().lower() for h in header] != expected:
            raise IngestError(
                f"line 1: expected header {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise IngestError(f"line {line_no}: expected 5 fields, "
                                  f"got {len(row)}")
            date = _parse_date(row[0], line_no)
            region = row[1].strip().upper()
            if region not in REGION_CODES:
                raise IngestError(
                    f"line {line_no}: unknown region code {region!r}")
            key = (region, date)
            if key in seen:
                raise IngestError(
                    f"line {line_no}: duplicate entry for "
                    f"({region}, {date.isoformat()})")
            seen.add(key)
            conf = _parse_count(row[2], "confirmed", line_no)
            reco = _parse_count(row[3], "recovered", line_no)
            dece = _parse_count(row[4], "deceased", line_no)
            tables.setdefault(region, RawRegionTable(region, [])).rows.append(
                (date, conf, reco, dece))
    for table in tables.values():
        table.rows.sort(key=lambda r: r[0])
    return tables


def _parse_wide(path) -> dict[str, RawRegionTable]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty input file") from None
        cols = [h.strip() for h in header]
        if len(cols) < 3 or cols[0].lower() != "date" \
                or cols[1].lower() != "status":
            raise IngestError("line 1: expected header date,status,<codes...>")
        codes = []
        for c in cols[2:]:
            code = c.upper()
            if code in _WIDE_IGNORED:
                codes.append(None)
            elif code in REGION_CODES:
                codes.append(code)
            else:
                raise IngestError(f"line 1: unknown region code {code!r}")
        # daily new counts keyed by (region, date, status)
        daily: dict[str, dict[dt.date, dict[str, float]]] = {
            c: {} for c in codes if c}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise IngestError(f"line {line_no}: expected {len(cols)} "
                                  f"fields, got {len(row)}")
            date = _parse_date(row[0], line_no)
            status = row[1].strip().lower()
            if status not in ("confirmed", "recovered", "deceased"):
                raise IngestError(
                    f"line {line_no}: unknown status {row[1]!r}")
            for code, cell in zip(codes, row[2:]):
                if code is None:
                    continue
                per_date = daily[code].setdefault(date, {})
                if status in per_date:
                    raise IngestError(
                        f"line {line_no}: duplicate entry for "
                        f"({code}, {date.isoformat()})")
                per_date[status] = _parse_count(cell, status, line_no)
    tables: dict[str, RawRegionTable] = {}
    for code, by_date in daily.items():
        rows = []
        conf = reco = dece = 0.0
        for date in sorted(by_date):
            cell = by_date[date]
            conf += cell.get("confirmed", 0.0)
            reco += cell.get("recovered", 0.0)
            dece += cell.get("deceased", 0.0)
            rows.append((date, conf, reco, dece))
        tables[code] = RawRegionTable(code, rows)
    return tables


def load_populations(path) -> dict[str, float]:
    """Read the region -> population table."""
    populations: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != \
                ["region", "population"]:
            raise IngestError("population file must have header "
                              "region,population")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"line {line_no}: expected 2 fields")
            region = row[0].strip().upper()
            if region not in REGION_CODES:
                raise IngestError(
                    f"line {line_no}: unknown region code {region!r}")
            try:
                pop = float(row[1])
            except ValueError:
                raise IngestError(
                    f"line {line_no}: bad population {row[1]!r}") from None
            if pop <= 0:
                raise IngestError(f"line {line_no}: population must be > 0")
            populations[region] = pop
    return populations


def clean(raw: RawRegionTable, population: float,
          report: CleanReport | None = None
          ) -> tuple[RegionSeries | None, CleanReport]:
    """Repair a raw table into a valid RegionSeries, logging every change.

    Rules, in order: missing dates carried forward; each cumulative
    series forced non-decreasing by running maximum; recovered reduced
    where recovered+deceased would exceed confirmed. Regions with fewer
    than 8 usable rows are skipped.
    """
    if report is None:
        report = CleanReport()
    rows = raw.rows
    if len(rows) < MIN_USABLE_ROWS:
        report.skip(raw.region_code,
                    f"only {len(rows)} rows, need >= {MIN_USABLE_ROWS}")
        return None, report

    # fill date gaps by carrying the previous cumulative values forward
    filled: list[tuple[dt.date, float, float, float]] = [rows[0]]
    for row in rows[1:]:
        prev = filled[-1]
        gap_date = prev[0] + dt.timedelta(days=1)
        while gap_date < row[0]:
            for var, val in zip(("confirmed", "recovered", "deceased"),
                                prev[1:]):
                report.add(Repair(raw.region_code, gap_date, var,
                                  float("nan"), val, "fill-missing-date"))
            filled.append((gap_date, prev[1], prev[2], prev[3]))
            gap_date += dt.timedelta(days=1)
        filled.append(row)

    dates = tuple(r[0] for r in filled)
    series = {
        "confirmed": np.array([r[1] for r in filled], dtype=float),
        "recovered": np.array([r[2] for r in filled], dtype=float),
        "deceased": np.array([r[3] for r in filled], dtype=float),
    }

    # running maximum: zero out negative daily increments
    for var, values in series.items():
        running = np.maximum.accumulate(values)
        for idx in np.nonzero(running != values)[0]:
            report.add(Repair(raw.region_code, dates[idx], var,
                              values[idx], running[idx], "running-maximum"))
        series[var] = running

    # deceased alone must not exceed confirmed (rare upstream glitch)
    dec = series["deceased"]
    dec_capped = np.minimum(dec, series["confirmed"])
    dec_capped = np.minimum.accumulate(dec_capped[::-1])[::-1]
    for idx in np.nonzero(dec_capped != dec)[0]:
        report.add(Repair(raw.region_code, dates[idx], "deceased",
                          dec[idx], dec_capped[idx],
                          "removed-exceeds-confirmed"))
    series["deceased"] = dec_capped

    # recovered + deceased must not exceed confirmed; reduce recovered.
    # A backward running minimum keeps recovered non-decreasing after the
    # reduction; each changed cell is logged exactly once.
    rec = series["recovered"]
    cap = np.maximum(series["confirmed"] - series["deceased"], 0.0)
    capped = np.minimum(rec, cap)
    capped = np.minimum.accumulate(capped[::-1])[::-1]
    for idx in np.nonzero(capped != rec)[0]:
        report.add(Repair(raw.region_code, dates[idx], "recovered",
                          rec[idx], capped[idx], "removed-exceeds-confirmed"))
    series["recovered"] = capped

    if population <= series["confirmed"][-1]:
        report.skip(raw.region_code,
                    "population does not exceed final confirmed count")
        return None, report

    return RegionSeries(
        region_code=raw.region_code,
        dates=dates,
        confirmed=series["confirmed"],
        recovered=series["recovered"],
        deceased=series["deceased"],
        population=population,
    ), report


def observed_increments(series: RegionSeries) -> IncrementSeries:
    """First differences of the cleaned cumulative series."""
    return IncrementSeries(
        di=tuple(np.diff(series.confirmed)),
        dr=tuple(np.diff(series.recovered)),
        dd=tuple(np.diff(series.deceased)),
    )
