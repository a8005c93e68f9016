"""Four-compartment SIR(D) dynamics: derivative field, fixed-step RK4
integration, and the reproduction number.

All quantities are absolute person counts with an explicit population N.
Every function here is pure; the dataclasses are frozen values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SirdParams",
    "CompartmentState",
    "Trajectory",
    "IncrementSeries",
    "UndefinedReproductionNumber",
    "derivative",
    "integrate",
    "daily_increments",
    "r0_of",
]


class UndefinedReproductionNumber(ValueError):
    """Raised when nu + mu = 0 and beta/(nu+mu) has no value."""


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class SirdParams:
    """Per-day rates: effective contact (beta), recovery (nu), fatality (mu)."""

    beta: float
    nu: float
    mu: float

    def __post_init__(self):
        _require_finite("SirdParams", self.beta, self.nu, self.mu)
        if self.beta < 0 or self.nu < 0 or self.mu < 0:
            raise ValueError(f"rates must be non-negative: {self}")


@dataclass(frozen=True)
class CompartmentState:
    """Counts of susceptible, active infected, recovered, deceased persons."""

    s: float
    i: float
    r: float
    d: float

    def __post_init__(self):
        _require_finite("CompartmentState", self.s, self.i, self.r, self.d)
        if min(self.s, self.i, self.r, self.d) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    @property
    def total(self) -> float:
        return self.s + self.i + self.r + self.d

    @property
    def ever_infected(self) -> float:
        """Cumulative ever-infected count (active + recovered + deceased)."""
        return self.i + self.r + self.d


@dataclass(frozen=True)
class Trajectory:
    """Daily samples of an integrated SIR(D) path, initial state included."""

    initial: CompartmentState
    days: tuple[CompartmentState, ...]
    population: float

    def states(self) -> tuple[CompartmentState, ...]:
        return (self.initial,) + self.days


@dataclass(frozen=True)
class IncrementSeries:
    """Daily new infections, recoveries and deaths, index-aligned."""

    di: tuple[float, ...]
    dr: tuple[float, ...]
    dd: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.di) == len(self.dr) == len(self.dd)):
            raise ValueError("increment series must have equal lengths")

    def __len__(self) -> int:
        return len(self.di)


def derivative(state: CompartmentState, params: SirdParams, n: float):
    """Instantaneous rates (ds, di, dr, dd) of the SIR(D) system.

    ds = -beta*(s/n)*i, di = beta*(s/n)*i - (nu+mu)*i, dr = nu*i, dd = mu*i.
    The four components sum to zero: the population is closed.
    """
    if not (math.isfinite(n) and n > 0):
        raise ValueError(f"population must be positive and finite, got {n!r}")
    infection = params.beta * (state.s / n) * state.i
    dr = params.nu * state.i
    dd = params.mu * state.i
    return (-infection, infection - dr - dd, dr, dd)


def _rk4_day(s, i, r, d, beta_over_n, nu, mu, steps_per_day):
    """Advance one day by `steps_per_day` classical RK4 steps.

    Works elementwise on floats or numpy arrays. After each step any
    negative compartment is clamped to zero with the deficit absorbed
    into s, keeping s+i+r+d constant.
    """
    h = 1.0 / steps_per_day
    total = s + i + r + d
    for _ in range(steps_per_day):
        k1 = _deriv_arrays(s, i, r, d, beta_over_n, nu, mu)
        k2 = _deriv_arrays(
            s + 0.5 * h * k1[0], i + 0.5 * h * k1[1],
            r + 0.5 * h * k1[2], d + 0.5 * h * k1[3],
            beta_over_n, nu, mu)
        k3 = _deriv_arrays(
            s + 0.5 * h * k2[0], i + 0.5 * h * k2[1],
            r + 0.5 * h * k2[2], d + 0.5 * h * k2[3],
            beta_over_n, nu, mu)
        k4 = _deriv_arrays(
            s + h * k3[0], i + h * k3[1], r + h * k3[2], d + h * k3[3],
            beta_over_n, nu, mu)
        c = h / 6.0
        s = s + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        i = i + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r = r + c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        d = d + c * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        s, i, r, d = _clamp_nonnegative(s, i, r, d, total)
    return s, i, r, d


def _deriv_arrays(s, i, r, d, beta_over_n, nu, mu):
    infection = beta_over_n * s * i
    dr = nu * i
    dd = mu * i
    return (-infection, infection - dr - dd, dr, dd)


def _clamp_nonnegative(s, i, r, d, total):
    """Clamp i, r, d at zero, absorbing the deficit into s."""
    clipped = np.minimum(i, 0.0) + np.minimum(r, 0.0) + np.minimum(d, 0.0)
    if np.all(clipped == 0.0) and np.all(s >= 0.0):
        return s, i, r, d
    i = np.maximum(i, 0.0)
    r = np.maximum(r, 0.0)
    d = np.maximum(d, 0.0)
    s = total - i - r - d
    # s itself can only go negative if i+r+d overshot the population;
    # rescale the other compartments to restore conservation exactly.
    neg = s < 0.0
    if np.any(neg):
        scale = np.where(neg, total / (i + r + d), 1.0)
        i = i * scale
        r = r * scale
        d = d * scale
        s = np.where(neg, 0.0, s)
    return s, i, r, d


def integrate(initial: CompartmentState, params: SirdParams,
              horizon_days: int, steps_per_day: int = 10) -> Trajectory:
    """Integrate the SIR(D) system with fixed-step classical RK4.

    Returns one sampled state per whole day after `initial`. The
    population s+i+r+d is conserved to within rounding at every sample.
    """
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    if steps_per_day < 1:
        raise ValueError("steps_per_day must be >= 1")
    n = initial.total
    if n <= 0:
        raise ValueError("population must be positive")
    s, i, r, d = initial.s, initial.i, initial.r, initial.d
    beta_over_n = params.beta / n
    days = []
    for _ in range(horizon_days):
        s, i, r, d = _rk4_day(s, i, r, d, beta_over_n, params.nu, params.mu,
                              steps_per_day)
        days.append(CompartmentState(float(s), float(i), float(r), float(d)))
    return Trajectory(initial=initial, days=tuple(days), population=n)


def daily_increments(traj: Trajectory) -> IncrementSeries:
    """Day-over-day increments along a trajectory.

    New infections are the change in ever-infected (i+r+d), matching how
    cumulative confirmed counts are reported.
    """
    states = traj.states()
    if len(states) < 2:
        raise ValueError("trajectory must cover at least one day")
    di, dr, dd = [], [], []
    for prev, cur in zip(states, states[1:]):
        di.append(cur.ever_infected - prev.ever_infected)
        dr.append(cur.r - prev.r)
        dd.append(cur.d - prev.d)
    return IncrementSeries(di=tuple(di), dr=tuple(dr), dd=tuple(dd))


def r0_of(params: SirdParams) -> float:
    """Reproduction number beta/(nu+mu)."""
    removal = params.nu + params.mu
    if removal <= 0:
        raise UndefinedReproductionNumber(
            "reproduction number undefined when nu + mu = 0")
    return params.beta / removal
