import datetime as dt

import numpy as np
import pytest

from episird import CompartmentState, SirdParams, integrate
from episird.ingest import RegionSeries

START = dt.date(2020, 3, 14)


def make_series(params_by_day, n_days, population=1e6, i0=80.0, r0=15.0,
                d0=5.0, code="DL", steps_per_day=10):
    """Synthetic RegionSeries from a day-indexed parameter schedule."""
    state = CompartmentState(population - i0 - r0 - d0, i0, r0, d0)
    states = [state]
    for day in range(n_days):
        traj = integrate(states[-1], params_by_day(day), 1, steps_per_day)
        states.append(traj.days[0])
    dates = tuple(START + dt.timedelta(days=k) for k in range(len(states)))
    return RegionSeries(
        region_code=code,
        dates=dates,
        confirmed=np.array([s.ever_infected for s in states]),
        recovered=np.array([s.r for s in states]),
        deceased=np.array([s.d for s in states]),
        population=float(population),
    )


def constant_series(params, n_days, **kwargs):
    return make_series(lambda day: params, n_days, **kwargs)


def euler_oracle(initial, params, n_days, population, step=1e-4):
    """Forward-Euler reference integration, sampled at day boundaries.

    Independent of the RK4 path under test; works on scalars or on
    numpy arrays (one draw per element).
    """
    s, i, r, d = initial
    beta, nu, mu = params
    steps_per_day = int(round(1.0 / step))
    samples = []
    for _ in range(n_days):
        for _ in range(steps_per_day):
            f = beta * s * i / population
            dr = nu * i
            dd = mu * i
            s = s - step * f
            i = i + step * (f - dr - dd)
            r = r + step * dr
            d = d + step * dd
        samples.append((np.copy(s), np.copy(i), np.copy(r), np.copy(d)))
    return samples


def true_estimates(series, params):
    """EstimateSeries carrying known constant parameters for every date
    after the first; used when fitting itself is not under test."""
    import math

    from episird.estimation import EstimateSeries
    from episird.sird_core import r0_of

    dates = series.dates[1:]
    n = len(dates)
    try:
        r0 = r0_of(params)
    except Exception:
        r0 = math.nan
    return EstimateSeries(
        region_code=series.region_code,
        dates=tuple(dates),
        raw=(params,) * n,
        smoothed=(params,) * n,
        r0_raw=np.full(n, r0),
        r0_robust=np.full(n, r0),
        rss=np.zeros(n),
        saturated=(False,) * n,
    )


@pytest.fixture(scope="session")
def quick_fit_config():
    """Small grid for tests that exercise logic rather than accuracy."""
    from episird.estimation import FitConfig, ParamGrid

    return FitConfig(
        beta_grid=ParamGrid(0.0, 1.0, 11),
        nu_grid=ParamGrid(0.0, 0.4, 11),
        mu_grid=ParamGrid(0.0, 0.1, 11),
        refine_levels=2,
        steps_per_day=4,
    )
