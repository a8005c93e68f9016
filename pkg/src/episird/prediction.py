"""Forecasting from the latest smoothed parameters, with non-parametric
prediction bands from the empirical distribution of past one-step errors.

Parameters are held frozen at the last smoothed estimate for the whole
horizon; band offsets come from empirical quantiles of historical
one-step errors and are identical at every horizon.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from . import sird_core
from .estimation import EstimateSeries
from .ingest import RegionSeries

__all__ = [
    "VARIABLES",
    "MIN_ERRORS_FOR_BANDS",
    "BandUnavailable",
    "PointForecast",
    "ErrorDistribution",
    "Forecast",
    "predict",
    "one_step_errors",
    "band",
    "forecast",
    "long_term",
    "enforce_removal_bound",
]

VARIABLES = ("infections", "recoveries", "deaths")
MIN_ERRORS_FOR_BANDS = 10


class BandUnavailable(RuntimeError):
    """Too few historical one-step errors to build prediction bands."""


@dataclass(frozen=True)
class PointForecast:
    """Point-predicted daily increments and cumulative totals."""

    region_code: str
    dates: tuple
    increment: dict
    cumulative: dict


@dataclass(frozen=True)
class ErrorDistribution:
    """Sorted historical one-step prediction errors per variable."""

    errors: dict

    def __post_init__(self):
        for var in VARIABLES:
            if var not in self.errors:
                raise ValueError(f"missing error series for {var!r}")

    def count(self) -> int:
        return len(self.errors[VARIABLES[0]])


@dataclass(frozen=True)
class Forecast:
    """Point forecast with optional prediction bands and peak summary."""

    region_code: str
    dates: tuple
    level: float
    increment: dict
    cumulative: dict
    lower: dict | None
    upper: dict | None
    peak_date: dt.date | None = None
    peak_height: float | None = None

    @property
    def has_bands(self) -> bool:
        return self.lower is not None


def enforce_removal_bound(i_cum, r_cum, d_cum):
    """Scale recovered and deceased down proportionally where their sum
    exceeds the cumulative ever-infected count, restoring R + D = I."""
    i_cum = np.asarray(i_cum, dtype=float)
    r_cum = np.asarray(r_cum, dtype=float).copy()
    d_cum = np.asarray(d_cum, dtype=float).copy()
    removed = r_cum + d_cum
    over = removed > i_cum
    if np.any(over):
        scale = np.where(over & (removed > 0), i_cum / np.where(removed > 0, removed, 1.0), 1.0)
        r_cum = r_cum * scale
        d_cum = d_cum * scale
    return r_cum, d_cum


def _check_aligned(series: RegionSeries, estimates: EstimateSeries) -> None:
    if not estimates.dates or estimates.dates[-1] != series.dates[-1]:
        raise ValueError(
            f"estimates end at "
            f"{estimates.dates[-1] if estimates.dates else 'never'} but "
            f"observations end at {series.dates[-1]}; refit the region")


def _predict_from(series: RegionSeries, params: sird_core.SirdParams,
                  anchor_index: int, horizon: int,
                  steps_per_day: int) -> PointForecast:
    conf = series.confirmed[anchor_index]
    rec = series.recovered[anchor_index]
    dec = series.deceased[anchor_index]
    anchor = sird_core.CompartmentState(
        s=series.population - conf, i=conf - rec - dec, r=rec, d=dec)
    traj = sird_core.integrate(anchor, params, horizon, steps_per_day)

    i_cum = np.array([st.ever_infected for st in traj.days])
    r_cum = np.array([st.r for st in traj.days])
    d_cum = np.array([st.d for st in traj.days])
    r_cum, d_cum = enforce_removal_bound(i_cum, r_cum, d_cum)

    prev_i = np.concatenate(([anchor.ever_infected], i_cum[:-1]))
    prev_r = np.concatenate(([anchor.r], r_cum[:-1]))
    prev_d = np.concatenate(([anchor.d], d_cum[:-1]))

    anchor_date = series.dates[anchor_index]
    dates = tuple(anchor_date + dt.timedelta(days=h)
                  for h in range(1, horizon + 1))
    return PointForecast(
        region_code=series.region_code,
        dates=dates,
        increment={"infections": i_cum - prev_i,
                   "recoveries": r_cum - prev_r,
                   "deaths": d_cum - prev_d},
        cumulative={"infections": i_cum,
                    "recoveries": r_cum,
                    "deaths": d_cum},
    )


def predict(series: RegionSeries, estimates: EstimateSeries,
            horizon: int, steps_per_day: int = 10) -> PointForecast:
    """Point forecast `horizon` days past the last observation.

    Starts from the last observed state and integrates under the last
    smoothed parameter estimate, enforcing cumulative R + D <= I after
    each day.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    _check_aligned(series, estimates)
    return _predict_from(series, estimates.smoothed[-1],
                         len(series) - 1, horizon, steps_per_day)


def _one_step_pairs(series: RegionSeries, estimates: EstimateSeries,
                    steps_per_day: int = 10):
    """(observed, predicted) daily increments for every historical date
    whose previous day has an estimate; time-ordered."""
    index_of = {date: k for k, date in enumerate(series.dates)}
    est_of = {date: p for date, p in zip(estimates.dates, estimates.smoothed)}
    obs = {var: [] for var in VARIABLES}
    pred = {var: [] for var in VARIABLES}
    for date in estimates.dates:
        prev = date - dt.timedelta(days=1)
        if prev not in est_of or prev not in index_of:
            continue
        k = index_of[date]
        step = _predict_from(series, est_of[prev], k - 1, 1, steps_per_day)
        obs["infections"].append(series.confirmed[k] - series.confirmed[k - 1])
        obs["recoveries"].append(series.recovered[k] - series.recovered[k - 1])
        obs["deaths"].append(series.deceased[k] - series.deceased[k - 1])
        for var in VARIABLES:
            pred[var].append(step.increment[var][0])
    return ({v: np.array(obs[v]) for v in VARIABLES},
            {v: np.array(pred[v]) for v in VARIABLES})


def one_step_errors(series: RegionSeries, estimates: EstimateSeries,
                    steps_per_day: int = 10,
                    trim: float = 0.0) -> ErrorDistribution:
    """Empirical distribution of historical one-step prediction errors.

    error(t) = observed increment(t) - increment predicted from the
    state and estimate at t-1. With trim > 0, that fraction of the
    sorted errors is dropped from each tail.
    """
    if not 0.0 <= trim < 0.5:
        raise ValueError("trim must be in [0, 0.5)")
    obs, pred = _one_step_pairs(series, estimates, steps_per_day)
    n = len(obs[VARIABLES[0]])
    if n < MIN_ERRORS_FOR_BANDS:
        raise BandUnavailable(
            f"only {n} one-step errors available, "
            f"need >= {MIN_ERRORS_FOR_BANDS}")
    errors = {}
    for var in VARIABLES:
        errs = np.sort(obs[var] - pred[var])
        if trim > 0.0:
            k = int(math.floor(trim * errs.size))
            if k:
                errs = errs[k:errs.size - k]
        errors[var] = errs
    return ErrorDistribution(errors=errors)


def band(point: float, errs: np.ndarray, level: float):
    """Prediction interval around a point forecast.

    Offsets are the empirical (1-level)/2 and 1-(1-level)/2 quantiles of
    the error pool (linear interpolation); the lower end is floored at
    zero because counts cannot be negative.
    """
    errs = np.asarray(errs, dtype=float)
    if errs.size == 0:
        raise ValueError("error pool must be non-empty")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    alpha = (1.0 - level) / 2.0
    lower = point + float(np.quantile(errs, alpha))
    upper = point + float(np.quantile(errs, 1.0 - alpha))
    return max(lower, 0.0), upper


def forecast(series: RegionSeries, estimates: EstimateSeries,
             horizon: int, level: float = 0.99, steps_per_day: int = 10,
             trim: float = 0.0) -> Forecast:
    """Point forecast plus prediction bands on the daily increments.

    If fewer than 10 historical one-step errors exist, the forecast is
    returned without bands.
    """
    point = predict(series, estimates, horizon, steps_per_day)
    try:
        dist = one_step_errors(series, estimates, steps_per_day, trim)
    except BandUnavailable:
        dist = None
    lower = upper = None
    if dist is not None:
        lower, upper = {}, {}
        for var in VARIABLES:
            lo = np.empty(horizon)
            hi = np.empty(horizon)
            for h in range(horizon):
                lo[h], hi[h] = band(point.increment[var][h],
                                    dist.errors[var], level)
            # a one-sided error pool could push a bound past the point
            lower[var] = np.minimum(lo, point.increment[var])
            upper[var] = np.maximum(hi, point.increment[var])
    return Forecast(
        region_code=series.region_code,
        dates=point.dates,
        level=level,
        increment=point.increment,
        cumulative=point.cumulative,
        lower=lower,
        upper=upper,
    )


FORECAST_CSV_HEADER = ("region,date,variable,point_increment,"
                       "lower,upper,point_cumulative")


def write_forecast_csv(fc: Forecast, path) -> None:
    def fmt(x):
        return "" if x is None or (isinstance(x, float) and math.isnan(x)) \
            else format(float(x), ".6g")

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# level={fc.level:g}\n")
        fh.write(FORECAST_CSV_HEADER + "\n")
        for var in VARIABLES:
            for h, date in enumerate(fc.dates):
                lo = fc.lower[var][h] if fc.lower is not None else None
                hi = fc.upper[var][h] if fc.upper is not None else None
                fh.write(",".join([
                    fc.region_code, date.isoformat(), var,
                    fmt(fc.increment[var][h]), fmt(lo), fmt(hi),
                    fmt(fc.cumulative[var][h]),
                ]) + "\n")


def long_term(series: RegionSeries, estimates: EstimateSeries,
              horizon: int = 365, level: float = 0.99,
              steps_per_day: int = 10, trim: float = 0.0) -> Forecast:
    """Year-ahead forecast with the peak daily-infection day reported."""
    fc = forecast(series, estimates, horizon, level, steps_per_day, trim)
    di = fc.increment["infections"]
    peak_date = peak_height = None
    if di.size and float(np.max(di)) > 0.0:
        k = int(np.argmax(di))
        peak_date = fc.dates[k]
        peak_height = float(di[k])
    return Forecast(
        region_code=fc.region_code,
        dates=fc.dates,
        level=fc.level,
        increment=fc.increment,
        cumulative=fc.cumulative,
        lower=fc.lower,
        upper=fc.upper,
        peak_date=peak_date,
        peak_height=peak_height,
    )
