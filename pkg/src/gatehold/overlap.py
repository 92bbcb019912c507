"""Expected gate-conflict overlap as a function of gate separation, and its A*B**x fit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

DELAY_RANGE = (-60, 240)
FIT_SEPARATIONS = np.arange(0, 241)


class OverlapError(ValueError):
    pass


@dataclass
class DelayDistributions:
    """Empirical delay pmfs on a 1-minute grid starting at ``lo``."""

    departure: np.ndarray
    arrival: np.ndarray
    lo: int = DELAY_RANGE[0]

    def __post_init__(self):
        self.departure = np.asarray(self.departure, dtype=float)
        self.arrival = np.asarray(self.arrival, dtype=float)
        for name, p in (("departure", self.departure), ("arrival", self.arrival)):
            if p.ndim != 1 or p.size == 0 or np.any(p < 0) or p.sum() <= 0:
                raise OverlapError(f"{name} delay distribution is empty or negative")
        self.departure = self.departure / self.departure.sum()
        self.arrival = self.arrival / self.arrival.sum()

    @classmethod
    def from_samples(cls, dep_delays: Iterable[int], arr_delays: Iterable[int],
                     lo: int = DELAY_RANGE[0], hi: int = DELAY_RANGE[1]) -> "DelayDistributions":
        """Bin signed delay samples at 1-minute resolution; out-of-range values are clipped."""
        def pmf(xs):
            xs = np.clip(np.rint(np.asarray(list(xs), dtype=float)).astype(int), lo, hi)
            if xs.size == 0:
                raise OverlapError("no delay samples")
            return np.bincount(xs - lo, minlength=hi - lo + 1).astype(float)
        return cls(pmf(dep_delays), pmf(arr_delays), lo)

    @classmethod
    def point_mass(cls, dep: int, arr: int) -> "DelayDistributions":
        lo = min(dep, arr, 0)
        hi = max(dep, arr, 0)
        d = np.zeros(hi - lo + 1)
        a = np.zeros(hi - lo + 1)
        d[dep - lo] = 1
        a[arr - lo] = 1
        return cls(d, a, lo)

    def difference(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and pmf of (departure delay - arrival delay)."""
        pmf = np.convolve(self.departure, self.arrival[::-1])
        lo_d, hi_d = self.lo, self.lo + self.departure.size - 1
        lo_a, hi_a = self.lo, self.lo + self.arrival.size - 1
        support = np.arange(lo_d - hi_a, hi_d - lo_a + 1)
        return support, pmf


def expected_overlap(dists: DelayDistributions, sep: float, conditional: bool = False) -> float:
    """Expected overlap when the next arrival is scheduled ``sep`` minutes after the departure.

    With the departure scheduled at 0 and the arrival at ``sep``, the
    overlap is (D_dep - D_arr - sep) when positive. The default returns the
    unconditional mean E[overlap] = E[... | conflict] * P(conflict);
    ``conditional=True`` returns E[... | conflict] (0 if no conflict is possible).
    """
    if sep < 0:
        raise OverlapError("separation must be non-negative")
    x, p = dists.difference()
    excess = x - sep
    m = excess > 0
    mass = float(p[m].sum())
    total = float((excess[m] * p[m]).sum())
    if conditional:
        return total / mass if mass > 0 else 0.0
    return total


def overlap_table(dists: DelayDistributions, seps: Sequence[int] = FIT_SEPARATIONS) -> dict:
    """Both normalizations plus the conflict probability over a range of separations."""
    x, p = dists.difference()
    seps = np.asarray(seps)
    # tail sums via reverse cumulative sums on the integer support
    tail_p = np.cumsum(p[::-1])[::-1]
    tail_xp = np.cumsum((x * p)[::-1])[::-1]
    uncond, cond, prob = [], [], []
    for s in seps:
        idx = np.searchsorted(x, s, side="right")  # first x > s
        if idx >= x.size:
            mass = total = 0.0
        else:
            mass = float(tail_p[idx])
            total = float(tail_xp[idx] - s * mass)
        uncond.append(max(total, 0.0))
        prob.append(mass)
        cond.append(total / mass if mass > 1e-15 else 0.0)
    return {"sep": seps, "expected": np.array(uncond), "conditional": np.array(cond),
            "probability": np.array(prob)}


@dataclass
class ExponentialFit:
    A: float
    B: float
    rmse_log: float
    n_points: int

    def __call__(self, sep):
        return self.A * np.power(self.B, sep)


def fit_exponential(seps: Iterable[float], overlaps: Iterable[float]) -> ExponentialFit:
    """Least-squares fit of log(overlap) = log A + sep * log B on positive samples."""
    s = np.asarray(list(seps), dtype=float)
    v = np.asarray(list(overlaps), dtype=float)
    if s.shape != v.shape:
        raise OverlapError("separation and overlap arrays differ in length")
    m = v > 0
    if not m.any():
        raise OverlapError("degenerate table: all overlaps are zero")
    if np.unique(s[m]).size < 3:
        raise OverlapError("need at least 3 distinct separations with positive overlap")
    x, y = s[m], np.log(v[m])
    xm, ym = x.mean(), y.mean()
    slope = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    return ExponentialFit(math.exp(intercept), math.exp(slope), float(np.sqrt(np.mean(resid**2))), int(m.sum()))


@dataclass
class DisturbanceModel:
    A: float
    B: float
    table: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if self.A < 0 or not (0 < self.B <= 1):
            raise OverlapError(f"invalid disturbance parameters A={self.A}, B={self.B}")

    def __call__(self, sep):
        return self.A * np.power(self.B, sep)

    @classmethod
    def from_distributions(cls, dists: DelayDistributions,
                           seps: Sequence[int] = FIT_SEPARATIONS) -> tuple["DisturbanceModel", dict]:
        """Tabulate the unconditional overlap, fit A*B**x, and report both normalizations."""
        table = overlap_table(dists, seps)
        fit = fit_exponential(table["sep"], table["expected"])
        report = {
            "A": fit.A,
            "B": fit.B,
            "rmse_log": fit.rmse_log,
            "n_points": fit.n_points,
            "expected_at_zero": float(table["expected"][0]) if len(seps) else None,
            "conditional_at_zero": float(table["conditional"][0]) if len(seps) else None,
        }
        cm = table["conditional"] > 0
        if np.unique(table["sep"][cm]).size >= 3:
            cfit = fit_exponential(table["sep"][cm], table["conditional"][cm])
            report["conditional_fit"] = {"A": cfit.A, "B": cfit.B, "rmse_log": cfit.rmse_log}
        return cls(min(fit.A, math.inf), min(fit.B, 1.0), table), report


def delays_from_flights(flights) -> DelayDistributions:
    """Empirical departure and arrival delay distributions of a schedule."""
    dep = [f.act_dep - f.sched_dep for f in flights if f.sched_dep is not None and f.act_dep is not None]
    arr = [f.act_arr - f.sched_arr for f in flights if f.sched_arr is not None and f.act_arr is not None]
    return DelayDistributions.from_samples(dep, arr)
