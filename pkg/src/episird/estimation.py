"""Dynamic parameter fitting: per-day windowed least squares over a
nested grid, geometric smoothing, and robust reproduction numbers.

The window objective integrates the SIR(D) system from the observed
state at the window anchor and compares model daily increments against
observed daily increments, summed over infections, recoveries and
deaths. The grid evaluation is the hot loop and runs under numba.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import sird_core
from .sird_core import CompartmentState, SirdParams, UndefinedReproductionNumber
from .ingest import RegionSeries

__all__ = [
    "ParamGrid",
    "FitConfig",
    "EstimateSeries",
    "window_rss",
    "fit_window",
    "smooth_series",
    "robust_r0",
    "fit_region",
]


@dataclass(frozen=True)
class ParamGrid:
    """Inclusive search range and point count for one parameter axis."""

    lower: float
    upper: float
    points: int

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("grid bounds must be finite")
        if self.lower < 0 or self.upper < self.lower:
            raise ValueError(f"invalid grid bounds [{self.lower}, {self.upper}]")
        if self.points < 1:
            raise ValueError("grid needs at least one point")

    def axis(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.points)

    @property
    def spacing(self) -> float:
        if self.points == 1:
            return 0.0
        return (self.upper - self.lower) / (self.points - 1)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the windowed fit and its post-processing."""

    window: int = 7
    smooth_factor: float = 0.75
    median_mode: str = "rolling7"
    beta_grid: ParamGrid = ParamGrid(0.0, 1.5, 31)
    nu_grid: ParamGrid = ParamGrid(0.0, 0.5, 31)
    mu_grid: ParamGrid = ParamGrid(0.0, 0.2, 31)
    refine_levels: int = 3
    refine_shrink: float = 5.0
    steps_per_day: int = 10

    def __post_init__(self):
        if self.window < 3:
            raise ValueError("window must be >= 3 (three free parameters)")
        if not 0.0 < self.smooth_factor < 1.0:
            raise ValueError("smooth_factor must be in (0, 1)")
        if self.refine_levels < 1:
            raise ValueError("refine_levels must be >= 1")
        if self.steps_per_day < 1:
            raise ValueError("steps_per_day must be >= 1")
        _parse_median_mode(self.median_mode)

    def final_spacing(self) -> tuple[float, float, float]:
        """Grid spacing per axis after the last refinement level."""
        shrink = self.refine_shrink ** (self.refine_levels - 1)
        return (self.beta_grid.spacing / shrink,
                self.nu_grid.spacing / shrink,
                self.mu_grid.spacing / shrink)


@dataclass(frozen=True)
class EstimateSeries:
    """Per-day raw and smoothed parameter estimates for one region."""

    region_code: str
    dates: tuple
    raw: tuple[SirdParams, ...]
    smoothed: tuple[SirdParams, ...]
    r0_raw: np.ndarray          # nan where nu+mu = 0
    r0_robust: np.ndarray       # nan where no defined value in the window
    rss: np.ndarray
    saturated: tuple[bool, ...]  # minimizer on an upper grid bound
    failed_dates: tuple = ()

    def __len__(self) -> int:
        return len(self.dates)


def _parse_median_mode(mode: str) -> tuple[str, int]:
    if mode == "cumulative":
        return ("cumulative", 0)
    m = re.fullmatch(r"rolling(\d+)", mode)
    if m and int(m.group(1)) >= 1:
        return ("rolling", int(m.group(1)))
    raise ValueError(f"median mode must be 'rolling<k>' or 'cumulative', "
                     f"got {mode!r}")


def _anchor_state(series: RegionSeries, idx: int) -> CompartmentState:
    conf = series.confirmed[idx]
    rec = series.recovered[idx]
    dec = series.deceased[idx]
    active = conf - rec - dec
    if active < 0:
        raise ValueError(
            f"negative active count at anchor index {idx} "
            f"(series not cleaned?)")
    return CompartmentState(
        s=series.population - conf, i=active, r=rec, d=dec)


def _observed_window(series: RegionSeries, t_index: int, window: int):
    a = t_index - window
    if a < 0:
        raise ValueError("window extends before the first observation")
    sl_prev = slice(a, t_index)
    sl_cur = slice(a + 1, t_index + 1)
    di = series.confirmed[sl_cur] - series.confirmed[sl_prev]
    dr = series.recovered[sl_cur] - series.recovered[sl_prev]
    dd = series.deceased[sl_cur] - series.deceased[sl_prev]
    return di.astype(float), dr.astype(float), dd.astype(float)


def window_rss(params: SirdParams, series: RegionSeries, t_index: int,
               window: int, steps_per_day: int = 10) -> float:
    """Aggregate squared error of the model over one fit window.

    Integrates from the observed state at t_index - window and sums
    squared daily-increment errors over infections, recoveries and
    deaths for the `window` days ending at t_index.
    """
    anchor = _anchor_state(series, t_index - window)
    obs_di, obs_dr, obs_dd = _observed_window(series, t_index, window)
    traj = sird_core.integrate(anchor, params, window, steps_per_day)
    model = sird_core.daily_increments(traj)
    rss = 0.0
    for t in range(window):
        rss += (model.di[t] - obs_di[t]) ** 2
        rss += (model.dr[t] - obs_dr[t]) ** 2
        rss += (model.dd[t] - obs_dd[t]) ** 2
    return rss


@njit(cache=True, parallel=True)
def _grid_rss_kernel(beta, nu, mu, s0, i0, r0, d0, n,
                     obs_di, obs_dr, obs_dd, steps_per_day):  # pragma: no cover
    out = np.empty(beta.size)
    window = obs_di.size
    h = 1.0 / steps_per_day
    for g in prange(beta.size):
        bon = beta[g] / n
        v = nu[g]
        m = mu[g]
        s, i, r, d = s0, i0, r0, d0
        total = s + i + r + d
        prev_cum = i + r + d
        prev_r = r
        prev_d = d
        rss = 0.0
        for day in range(window):
            for _ in range(steps_per_day):
                # classical RK4 step
                f1 = bon * s * i
                k1s, k1i = -f1, f1 - (v + m) * i
                k1r, k1d = v * i, m * i

                s2 = s + 0.5 * h * k1s
                i2 = i + 0.5 * h * k1i
                f2 = bon * s2 * i2
                k2s, k2i = -f2, f2 - (v + m) * i2
                k2r, k2d = v * i2, m * i2

                s3 = s + 0.5 * h * k2s
                i3 = i + 0.5 * h * k2i
                f3 = bon * s3 * i3
                k3s, k3i = -f3, f3 - (v + m) * i3
                k3r, k3d = v * i3, m * i3

                s4 = s + h * k3s
                i4 = i + h * k3i
                f4 = bon * s4 * i4
                k4s, k4i = -f4, f4 - (v + m) * i4
                k4r, k4d = v * i4, m * i4

                c = h / 6.0
                s = s + c * (k1s + 2 * k2s + 2 * k3s + k4s)
                i = i + c * (k1i + 2 * k2i + 2 * k3i + k4i)
                r = r + c * (k1r + 2 * k2r + 2 * k3r + k4r)
                d = d + c * (k1d + 2 * k2d + 2 * k3d + k4d)

                if i < 0.0 or r < 0.0 or d < 0.0 or s < 0.0:
                    if i < 0.0:
                        i = 0.0
                    if r < 0.0:
                        r = 0.0
                    if d < 0.0:
                        d = 0.0
                    s = total - i - r - d
                    if s < 0.0:
                        scale = total / (i + r + d)
                        i *= scale
                        r *= scale
                        d *= scale
                        s = 0.0
            cum = i + r + d
            e1 = (cum - prev_cum) - obs_di[day]
            e2 = (r - prev_r) - obs_dr[day]
            e3 = (d - prev_d) - obs_dd[day]
            rss += e1 * e1 + e2 * e2 + e3 * e3
            prev_cum = cum
            prev_r = r
            prev_d = d
        out[g] = rss
    return out


def _refined_axis(grid: ParamGrid, center: float, level: int,
                  shrink: float) -> np.ndarray:
    """Axis for a refinement level, recentred on the current best point.

    Same point count as the coarse axis, spacing divided by
    shrink**level, shifted to stay inside the original bounds.
    """
    if level == 0 or grid.points == 1:
        return grid.axis()
    spacing = grid.spacing / shrink ** level
    span = spacing * (grid.points - 1)
    lo = center - span / 2.0
    lo = min(max(lo, grid.lower), grid.upper - span)
    return lo + spacing * np.arange(grid.points)


def fit_window(series: RegionSeries, t_index: int,
               config: FitConfig) -> tuple[SirdParams, float]:
    """Minimize the window objective by nested grid search.

    Evaluates the full coarse grid, then repeatedly recentres a grid of
    the same point count on the best cell with the spacing shrunk 5x.
    Exact ties go to the lexicographically smallest (beta, nu, mu).
    """
    anchor = _anchor_state(series, t_index - config.window)
    obs_di, obs_dr, obs_dd = _observed_window(series, t_index, config.window)
    n = float(series.population)

    best = (config.beta_grid.lower, config.nu_grid.lower, config.mu_grid.lower)
    best_rss = math.inf
    for level in range(config.refine_levels):
        bx = _refined_axis(config.beta_grid, best[0], level, config.refine_shrink)
        vx = _refined_axis(config.nu_grid, best[1], level, config.refine_shrink)
        mx = _refined_axis(config.mu_grid, best[2], level, config.refine_shrink)
        # index order (beta, nu, mu): ascending flat index is ascending
        # lexicographic order, so argmin's first-hit rule breaks ties
        bb, vv, mm = np.meshgrid(bx, vx, mx, indexing="ij")
        beta = np.ascontiguousarray(bb.ravel())
        nu = np.ascontiguousarray(vv.ravel())
        mu = np.ascontiguousarray(mm.ravel())
        rss = _grid_rss_kernel(
            beta, nu, mu,
            float(anchor.s), float(anchor.i), float(anchor.r), float(anchor.d),
            n, obs_di, obs_dr, obs_dd, config.steps_per_day)
        k = int(np.argmin(rss))
        best = (float(beta[k]), float(nu[k]), float(mu[k]))
        best_rss = float(rss[k])
    return SirdParams(*best), best_rss


def smooth_series(raw, factor: float, span: int):
    """Geometric weighted average over the trailing `span` raw estimates.

    Weight factor**(T-j) at lag T-j, normalized to sum to one; at the
    head of the series the window shrinks to the available points.
    """
    if not 0.0 < factor < 1.0:
        raise ValueError("factor must be in (0, 1)")
    if span < 1:
        raise ValueError("span must be >= 1")
    out = []
    for t in range(len(raw)):
        start = max(0, t - span + 1)
        weights = np.array([factor ** (t - j) for j in range(start, t + 1)])
        weights /= weights.sum()
        window = raw[start:t + 1]

        def avg(values):
            # anchored at the newest value so a constant window is an
            # exact fixed point despite normalization round-off
            last = values[-1]
            return float(last + sum(w * (v - last)
                                    for w, v in zip(weights, values)))

        out.append(SirdParams(
            beta=avg([p.beta for p in window]),
            nu=avg([p.nu for p in window]),
            mu=avg([p.mu for p in window]),
        ))
    return out


def robust_r0(r0_raw, mode: str = "rolling7") -> np.ndarray:
    """Median-robustified reproduction number series.

    rolling<k> takes the median of the defined values among the last k
    entries (shrinking at the head); cumulative uses the entire past.
    Undefined (nan) inputs are excluded; a window with no defined value
    yields nan.
    """
    values = np.asarray(r0_raw, dtype=float)
    if values.size == 0:
        raise ValueError("r0 series must be non-empty")
    kind, k = _parse_median_mode(mode)
    out = np.empty(values.size)
    for t in range(values.size):
        start = 0 if kind == "cumulative" else max(0, t - k + 1)
        window = values[start:t + 1]
        defined = window[~np.isnan(window)]
        out[t] = np.median(defined) if defined.size else math.nan
    return out


def fit_region(series: RegionSeries, config: FitConfig | None = None
               ) -> EstimateSeries:
    """Run the full dynamic fit for one region.

    For each day T from `window` onward: window fit -> raw estimate,
    geometric smoothing over the raw history, reproduction number from
    the smoothed parameters, then the robust median series.
    """
    if config is None:
        config = FitConfig()
    if len(series) < config.window + 1:
        raise ValueError(
            f"need at least {config.window + 1} days, have {len(series)}")

    dates, raw, rss_values, saturated, failed = [], [], [], [], []
    for t in range(config.window, len(series)):
        try:
            params, rss = fit_window(series, t, config)
        except ValueError as exc:
            failed.append((series.dates[t], str(exc)))
            continue
        dates.append(series.dates[t])
        raw.append(params)
        rss_values.append(rss)
        saturated.append(
            params.beta >= config.beta_grid.upper
            or params.nu >= config.nu_grid.upper
            or params.mu >= config.mu_grid.upper)

    if not raw:
        raise ValueError(
            f"no window fit succeeded for region {series.region_code}: "
            f"{failed}")
    smoothed = smooth_series(raw, config.smooth_factor, config.window)
    r0_raw = np.array([_r0_or_nan(p) for p in smoothed])
    return EstimateSeries(
        region_code=series.region_code,
        dates=tuple(dates),
        raw=tuple(raw),
        smoothed=tuple(smoothed),
        r0_raw=r0_raw,
        r0_robust=robust_r0(r0_raw, config.median_mode),
        rss=np.array(rss_values),
        saturated=tuple(saturated),
        failed_dates=tuple(failed),
    )


def _r0_or_nan(params: SirdParams) -> float:
    try:
        return sird_core.r0_of(params)
    except UndefinedReproductionNumber:
        return math.nan


ESTIMATES_CSV_HEADER = ("region,date,beta_raw,nu_raw,mu_raw,"
                        "beta,nu,mu,r0_raw,r0_robust,rss")


def _fmt(x: float) -> str:
    # 6 significant digits; undefined values serialize as empty fields
    return "" if math.isnan(x) else format(x, ".6g")


def write_estimates_csv(estimates: EstimateSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ESTIMATES_CSV_HEADER + "\n")
        for k, date in enumerate(estimates.dates):
            raw = estimates.raw[k]
            sm = estimates.smoothed[k]
            fields = [estimates.region_code, date.isoformat(),
                      _fmt(raw.beta), _fmt(raw.nu), _fmt(raw.mu),
                      _fmt(sm.beta), _fmt(sm.nu), _fmt(sm.mu),
                      _fmt(estimates.r0_raw[k]),
                      _fmt(estimates.r0_robust[k]),
                      _fmt(estimates.rss[k])]
            fh.write(",".join(fields) + "\n")


def read_estimates_csv(path) -> EstimateSeries:
    import csv
    import datetime as dt

    dates, raw, smoothed = [], [], []
    r0_raw, r0_robust, rss = [], [], []
    region = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(header) != ESTIMATES_CSV_HEADER:
            raise ValueError(f"{path}: not an estimates CSV")
        for row in reader:
            if not row:
                continue
            region = row[0]
            dates.append(dt.date.fromisoformat(row[1]))
            raw.append(SirdParams(float(row[2]), float(row[3]), float(row[4])))
            smoothed.append(
                SirdParams(float(row[5]), float(row[6]), float(row[7])))
            r0_raw.append(float(row[8]) if row[8] else math.nan)
            r0_robust.append(float(row[9]) if row[9] else math.nan)
            rss.append(float(row[10]))
    if region is None:
        raise ValueError(f"{path}: empty estimates CSV")
    return EstimateSeries(
        region_code=region, dates=tuple(dates), raw=tuple(raw),
        smoothed=tuple(smoothed), r0_raw=np.array(r0_raw),
        r0_robust=np.array(r0_robust), rss=np.array(rss),
        saturated=tuple(False for _ in dates))
