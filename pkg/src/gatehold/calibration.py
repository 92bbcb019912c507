"""Departure-process analytics: N(t)/T(t), saturation, take-off and taxi-out fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

WINDOW = 10  # minutes in the T(t) averaging window [t, t+9]


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class TakeoffParams:
    """Three-point runway service rate: c_i aircraft/min with probability p_i."""

    c1: float
    c2: float
    c3: float
    p1: float
    p2: float

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise CalibrationError("rates must be non-negative")
        if self.p1 < -1e-12 or self.p2 < -1e-12 or self.p1 + self.p2 > 1 + 1e-12:
            raise CalibrationError(f"invalid probabilities p1={self.p1}, p2={self.p2}")

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])

    @property
    def probs(self) -> np.ndarray:
        p3 = max(0.0, 1.0 - self.p1 - self.p2)
        return np.array([max(self.p1, 0.0), max(self.p2, 0.0), p3])

    def mean(self) -> float:
        return self.c1 * self.p1 + self.c2 * self.p2 + self.c3 * (1 - self.p1 - self.p2)

    def std(self, window: int = WINDOW) -> float:
        """Standard deviation of the window-averaged rate."""
        m2 = self.c1**2 * self.p1 + self.c2**2 * self.p2 + self.c3**2 * (1 - self.p1 - self.p2)
        return math.sqrt(max(m2 - self.mean() ** 2, 0.0) / window)

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "p1": self.p1, "p2": self.p2}


# Reference runway model for the single-departure-runway profile.
REFERENCE_PARAMS = TakeoffParams(c1=0.525, c2=1.025, c3=0.025, p1=0.3733, p2=0.38)
REFERENCE_STATED_MEAN = 0.5666
REFERENCE_STATED_STD = 0.1234


@dataclass
class ThroughputCurve:
    n: np.ndarray
    mean_t: np.ndarray
    std_t: np.ndarray
    count: np.ndarray

    @classmethod
    def from_series(cls, n_series, t_series, min_count: int = 1) -> "ThroughputCurve":
        n_series = np.asarray(n_series, dtype=int)
        t_series = np.asarray(t_series, dtype=float)
        if n_series.size == 0:
            return cls(*(np.array([], dtype=float) for _ in range(4)))
        ns, mean, std, cnt = [], [], [], []
        for v in np.unique(n_series):
            sel = t_series[n_series == v]
            if sel.size >= min_count:
                ns.append(v)
                mean.append(sel.mean())
                std.append(sel.std())
                cnt.append(sel.size)
        return cls(np.array(ns, dtype=int), np.array(mean), np.array(std), np.array(cnt, dtype=int))

    def contiguous(self) -> "ThroughputCurve":
        """Leading run of consecutive N values (sparse N values leave gaps)."""
        keep = min(1, self.n.size)
        while keep < self.n.size and self.n[keep] == self.n[keep - 1] + 1:
            keep += 1
        return ThroughputCurve(self.n[:keep], self.mean_t[:keep], self.std_t[:keep], self.count[:keep])

    def rows(self) -> list[dict]:
        return [
            {"n": int(n), "mean_t": float(m), "std_t": float(s), "count": int(c)}
            for n, m, s, c in zip(self.n, self.mean_t, self.std_t, self.count)
        ]


@dataclass(frozen=True)
class TaxiFit:
    terminal: Optional[str]
    mu_log: float
    sigma_log: float
    sample_count: int

    def __post_init__(self):
        if self.sigma_log <= 0:
            raise CalibrationError("sigma_log must be positive")

    @property
    def mean(self) -> float:
        return math.exp(self.mu_log + self.sigma_log**2 / 2)

    def to_dict(self) -> dict:
        return {"terminal": self.terminal, "mu_log": self.mu_log, "sigma_log": self.sigma_log,
                "sample_count": self.sample_count}


# --------------------------------------------------------------------------
# N(t) and T(t)


@dataclass
class NTSeries:
    t: np.ndarray
    n: np.ndarray
    rate: np.ndarray


def build_NT(events: Sequence[tuple[int, int]], start: Optional[int] = None,
             end: Optional[int] = None) -> NTSeries:
    """Build N(t) and T(t) on a one-minute grid from (push-back, take-off) pairs.

    ``events`` must be sorted by push-back time. N(t) counts aircraft with
    pushback <= t < takeoff; T(t) is the number of take-offs in [t, t+9]
    divided by 10.
    """
    ev = np.asarray(list(events), dtype=int).reshape(-1, 2)
    if ev.size and np.any(np.diff(ev[:, 0]) < 0):
        raise CalibrationError("events must be sorted by push-back time")
    if ev.size and np.any(ev[:, 1] < ev[:, 0]):
        raise CalibrationError("take-off precedes push-back")
    if start is None:
        start = int(ev[:, 0].min()) if ev.size else 0
    if end is None:
        end = int(ev[:, 1].max()) if ev.size else start - 1
    size = end - start + 1
    if size <= 0:
        empty = np.array([], dtype=int)
        return NTSeries(empty, empty, np.array([], dtype=float))
    diff = np.zeros(size + 1, dtype=int)
    takeoffs = np.zeros(size + WINDOW, dtype=int)
    for pb, to in ev:
        lo = max(pb - start, 0)
        hi = min(to - start, size)
        if lo < hi:
            diff[lo] += 1
            diff[hi] -= 1
        if 0 <= to - start < size:
            takeoffs[to - start] += 1
    n = np.cumsum(diff)[:size]
    csum = np.concatenate([[0], np.cumsum(takeoffs)])
    rate = (csum[WINDOW:WINDOW + size] - csum[:size]) / WINDOW
    return NTSeries(np.arange(start, end + 1), n, rate)


@dataclass
class CorrelationScan:
    offsets: list[int]
    correlation: list[float]  # nan where undefined
    best_offset: Optional[int]

    def rows(self):
        return [{"offset": o, "correlation": (None if math.isnan(r) else r)}
                for o, r in zip(self.offsets, self.correlation)]


def correlation_scan(n_series, t_series, offsets: Iterable[int]) -> CorrelationScan:
    """Pearson correlation of N(t) with T(t + dt) for each offset dt."""
    n_series = np.asarray(n_series, dtype=float)
    t_series = np.asarray(t_series, dtype=float)
    if n_series.shape != t_series.shape:
        raise CalibrationError("series must share the same grid")
    offs, corr = [], []
    size = n_series.size
    for dt in offsets:
        if dt >= 0:
            a, b = n_series[: size - dt], t_series[dt:]
        else:
            a, b = n_series[-dt:], t_series[: size + dt]
        r = math.nan
        if a.size >= 2 and a.std() > 0 and b.std() > 0:
            r = float(np.corrcoef(a, b)[0, 1])
        offs.append(int(dt))
        corr.append(r)
    valid = [(r, -abs(o), -o) for o, r in zip(offs, corr) if not math.isnan(r)]
    best = None
    if valid:
        r, _, neg_o = max(valid)
        best = -neg_o
    return CorrelationScan(offs, corr, best)


def detect_saturation(curve: ThroughputCurve, threshold: float = 0.01, window: int = 3) -> int:
    """Smallest N at which the throughput gain per unit N falls below ``threshold``.

    The gain at N is (mean_T[N + window] - mean_T[N]) / window. Only the
    first crossing matters, so noise in the sparsely sampled high-N tail
    cannot push N* upward.
    """
    n = np.asarray(curve.n, dtype=int)
    if n.size < window + 1:
        raise CalibrationError("curve too short for saturation detection")
    if np.any(np.diff(n) != 1):
        raise CalibrationError("curve must cover a contiguous N range")
    mean = np.asarray(curve.mean_t, dtype=float)
    gains = (mean[window:] - mean[:-window]) / window
    below = np.flatnonzero(gains < threshold)
    if below.size == 0:
        raise CalibrationError("no saturation in range")
    return int(n[below[0]])


# --------------------------------------------------------------------------
# Take-off parameter search


def solve_probabilities(c1, c2, c3, mu, sigma, window: int = WINDOW):
    """Solve the mean/std equations for (p1, p2); arrays broadcast.

    Both equations are linear in (p1, p2) once the second moment
    ``window * sigma**2 + mu**2`` is fixed. Singular systems yield nan.
    """
    c1, c2, c3 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (c1, c2, c3)))
    m2 = window * sigma**2 + mu**2
    a11, a12, b1 = c1 - c3, c2 - c3, mu - c3
    a21, a22, b2 = c1**2 - c3**2, c2**2 - c3**2, m2 - c3**2
    det = a11 * a22 - a12 * a21
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = np.where(np.abs(det) > 1e-12, (b1 * a22 - a12 * b2) / det, np.nan)
        p2 = np.where(np.abs(det) > 1e-12, (a11 * b2 - b1 * a21) / det, np.nan)
    return p1, p2


def _trinomial_outcomes(window: int):
    """All (n1, n2, n3) with n1+n2+n3 = window and their multinomial log-coefficients."""
    combos = [(a, b, window - a - b) for a in range(window + 1) for b in range(window + 1 - a)]
    arr = np.array(combos, dtype=float)
    logc = np.array([math.lgamma(window + 1) - sum(math.lgamma(k + 1) for k in c) for c in combos])
    return arr, logc


def takeoff_count_pmf(c, p, window: int = WINDOW, max_count: Optional[int] = None) -> np.ndarray:
    """Distribution of take-offs per window under a saturated runway queue.

    Rows are candidate parameter sets: ``c`` and ``p`` have shape (m, 3).
    The fractional clearance carried into the window is treated as uniform
    on [0, 1), which turns floor(carry + S) into a triangular kernel around
    the window's total service S.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if max_count is None:
        max_count = int(math.ceil(window * c.max())) + 1
    counts, logc = _trinomial_outcomes(window)
    with np.errstate(divide="ignore"):
        logp = np.log(np.clip(p, 1e-300, None))
    weights = np.exp(logc[None, :] + (logp @ counts.T))  # (m, outcomes)
    weights = np.nan_to_num(weights)
    totals = c @ counts.T  # (m, outcomes)
    ks = np.arange(max_count + 1)
    kernel = np.clip(1 - np.abs(totals[:, :, None] - ks[None, None, :]), 0, None)
    return np.einsum("mo,mok->mk", weights, kernel)


def empirical_count_pmf(counts: Iterable[int], max_count: int) -> np.ndarray:
    counts = np.asarray(list(counts), dtype=int)
    if counts.size == 0:
        raise CalibrationError("no empirical take-off counts")
    hist = np.bincount(np.clip(counts, 0, max_count), minlength=max_count + 1).astype(float)
    return hist / hist.sum()


def normal_count_pmf(mu: float, sigma: float, max_count: int, window: int = WINDOW) -> np.ndarray:
    """Integer-binned normal distribution of window take-off counts."""
    ks = np.arange(max_count + 1)
    m, s = window * mu, max(window * sigma, 1e-9)
    edges = np.concatenate([[-np.inf], ks[1:] - 0.5, [np.inf]])
    cdf = 0.5 * (1 + np.vectorize(math.erf)((edges - m) / (s * math.sqrt(2))))
    pmf = np.diff(cdf)
    return pmf / pmf.sum()


@dataclass
class TakeoffFit:
    params: TakeoffParams
    distance: float
    feasible_candidates: int
    empirical: np.ndarray = field(repr=False)
    model: np.ndarray = field(repr=False)


def fit_takeoff_params(mu_target: float, sigma_target: float, step: float = 0.025,
                       c_max: float = 2.0, empirical_counts: Optional[Iterable[int]] = None,
                       window: int = WINDOW) -> TakeoffFit:
    """Grid-search (c1, c2, c3) and solve for (p1, p2) to match a target distribution.

    Every triple on the grid ``step, 2*step, ..., c_max`` gets (p1, p2) from
    the mean/std equations; triples with valid probabilities are scored by
    total variation distance between the model's per-window take-off count
    distribution and the empirical one (a binned normal when no counts are
    given). Ties go to the lexicographically smallest triple.
    """
    if mu_target <= 0 or sigma_target <= 0 or step <= 0:
        raise CalibrationError("mu_target, sigma_target and step must be positive")
    grid = step * np.arange(1, int(math.floor(c_max / step + 1e-9)) + 1)
    max_count = int(math.ceil(window * grid.max())) + 1
    if empirical_counts is not None:
        emp = empirical_count_pmf(empirical_counts, max_count)
    else:
        emp = normal_count_pmf(mu_target, sigma_target, max_count, window)

    best = (math.inf, None, None)
    n_feasible = 0
    c2g, c3g = np.meshgrid(grid, grid, indexing="ij")
    c2g, c3g = c2g.ravel(), c3g.ravel()
    tol = 1e-9
    for c1 in grid:  # lexicographic order of c1, then (c2, c3)
        p1, p2 = solve_probabilities(c1, c2g, c3g, mu_target, sigma_target, window)
        ok = (np.isfinite(p1) & (p1 >= -tol) & (p2 >= -tol) & (p1 + p2 <= 1 + tol))
        if not ok.any():
            continue
        idx = np.flatnonzero(ok)
        n_feasible += idx.size
        cs = np.column_stack([np.full(idx.size, c1), c2g[idx], c3g[idx]])
        ps = np.column_stack([np.clip(p1[idx], 0, 1), np.clip(p2[idx], 0, 1)])
        ps = np.column_stack([ps, np.clip(1 - ps.sum(1), 0, 1)])
        model = takeoff_count_pmf(cs, ps, window, max_count)
        tv = 0.5 * np.abs(model - emp[None, :]).sum(axis=1)
        tv = np.round(tv, 12)
        j = int(np.argmin(tv))
        if tv[j] < best[0]:
            best = (float(tv[j]), (cs[j], ps[j]), model[j])
    if best[1] is None:
        raise CalibrationError("no feasible (p1, p2) on the whole grid")
    (c1, c2, c3), (p1, p2, _) = best[1]
    params = TakeoffParams(round(float(c1), 10), round(float(c2), 10), round(float(c3), 10),
                           float(p1), float(p2))
    return TakeoffFit(params, best[0], n_feasible, emp, best[2])


def window_counts(series: NTSeries, n_lo: int, n_hi: int) -> np.ndarray:
    """Take-offs per 10-minute window at minutes where N(t) lies in [n_lo, n_hi]."""
    sel = (series.n >= n_lo) & (series.n <= n_hi)
    return np.rint(series.rate[sel] * WINDOW).astype(int)


# --------------------------------------------------------------------------
# Taxi-out


SIGMA_FLOOR = 1e-6


def fit_taxi_lognormal(taxi_times, terminal: Optional[str] = None, min_samples: int = 30) -> TaxiFit:
    """Maximum-likelihood lognormal fit of nominal taxi-out minutes."""
    x = np.asarray(list(taxi_times), dtype=float)
    if x.size < min_samples:
        raise CalibrationError(f"need at least {min_samples} taxi-out samples, got {x.size}")
    if np.any(x <= 0):
        raise CalibrationError("taxi-out times must be positive")
    logs = np.log(x)
    return TaxiFit(terminal, float(logs.mean()), max(float(logs.std()), SIGMA_FLOOR), int(x.size))


def fit_taxi_by_terminal(records: Iterable[Mapping], npb_threshold: int = 3,
                         min_samples: int = 30) -> dict[str, TaxiFit]:
    """Fit per-terminal lognormals on flights that pushed back with N_pb below the threshold.

    Records need ``terminal``, ``npb`` and ``taxi_out`` keys. Terminals with
    too few unimpeded samples are skipped.
    """
    groups: dict[str, list[float]] = {}
    for r in records:
        if r["npb"] < npb_threshold and r["taxi_out"] > 0:
            groups.setdefault(r["terminal"], []).append(r["taxi_out"])
    fits = {}
    for term in sorted(groups):
        if len(groups[term]) >= min_samples:
            fits[term] = fit_taxi_lognormal(groups[term], term, min_samples)
    return fits


def npb_from_events(events: Sequence[tuple[int, int]]) -> np.ndarray:
    """Number of taxi-out aircraft on the surface at each push-back (excluding itself)."""
    ev = np.asarray(list(events), dtype=int).reshape(-1, 2)
    if ev.size == 0:
        return np.array([], dtype=int)
    pushes = np.sort(ev[:, 0])
    takeoffs = np.sort(ev[:, 1])
    out = []
    for pb, _ in ev:
        pushed_before = np.searchsorted(pushes, pb, side="left")
        gone = np.searchsorted(takeoffs, pb, side="right")
        out.append(pushed_before - gone)
    return np.maximum(np.asarray(out, dtype=int), 0)
