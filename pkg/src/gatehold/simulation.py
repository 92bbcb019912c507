"""Minute-stepped departure queuing simulation with gate holding and gate conflicts.

Each minute runs in a fixed order:

1. gate requests (arrivals at their actual time, towed-in departure legs
   ``dwell`` minutes before departure), in flight-id order. A request for an
   occupied gate is a gate conflict: the occupant is promoted and the
   newcomer waits at the gate;
2. tow-aways of arrival-only legs;
3. departures whose aircraft is at the gate and whose ready time has come
   join the push-back queue;
4. push-back clearance: promoted departures unconditionally, then FCFS while
   N < n_star (or everyone when holding is off). A cleared departure frees
   its gate at once and draws a nominal taxi-out time;
5. aircraft reaching the runway join the runway queue, which the runway
   process serves.

N is the number of departures that have pushed back and not yet taken off.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .calibration import REFERENCE_PARAMS, TakeoffParams, TaxiFit
from .schedule import UNPAIRED_DWELL, Flight, Schedule
from .takeoff import RunwayProcess


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    takeoff_params: TakeoffParams = REFERENCE_PARAMS
    taxi_fits: dict = field(default_factory=dict)  # terminal -> TaxiFit
    default_taxi: Optional[TaxiFit] = None
    n_star: Optional[int] = None
    replications: int = 15
    seed: int = 0
    t_buff: float = 0.0
    dwell: int = UNPAIRED_DWELL
    max_overrun: int = 24 * 60

    def __post_init__(self):
        if self.n_star is not None and self.n_star < 1:
            raise ValueError("n_star must be at least 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    def with_n_star(self, n_star: Optional[int]) -> "SimConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["n_star"] = n_star
        return SimConfig(**d)

    def taxi_fit(self, terminal: str) -> TaxiFit:
        fit = self.taxi_fits.get(terminal, self.default_taxi)
        if fit is None:
            raise SimulationError(f"no taxi-out model for terminal {terminal!r}")
        return fit


@dataclass
class GateConflictEvent:
    arrival: str
    gate: str
    blocker: str
    request_min: int
    release_min: int

    @property
    def overlap(self) -> int:
        # both aircraft are at the gate during the request minute, hence +1
        return self.release_min - self.request_min + 1


@dataclass
class FlightRecord:
    flight_id: str
    gate: str
    terminal: str
    ready_min: int
    pushback_min: int
    takeoff_min: int
    taxi_nominal: int
    npb: int
    promoted: bool

    @property
    def hold(self) -> int:
        return self.pushback_min - self.ready_min

    @property
    def taxi_out(self) -> int:
        return self.takeoff_min - self.pushback_min


@dataclass
class SimOutcome:
    gate_conflicts: int
    gate_held_departures: int
    mean_hold_min: float
    mean_hold_all_min: float
    mean_taxi_out_min: float
    departures: int
    records: list = field(default_factory=list, repr=False)
    conflicts: list = field(default_factory=list, repr=False)

    def metrics(self) -> dict:
        return {
            "gate_conflicts": self.gate_conflicts,
            "gate_held_departures": self.gate_held_departures,
            "mean_hold_min": self.mean_hold_min,
            "mean_hold_all_min": self.mean_hold_all_min,
            "mean_taxi_out_min": self.mean_taxi_out_min,
            "departures": self.departures,
        }

    @property
    def held_fraction(self) -> float:
        return self.gate_held_departures / self.departures if self.departures else 0.0


METRIC_KEYS = ("gate_conflicts", "gate_held_departures", "mean_hold_min", "mean_hold_all_min",
               "mean_taxi_out_min", "departures")


def _seed_streams(master: int, replication: int):
    ss = np.random.SeedSequence([master, 0x51A7, replication])
    taxi_ss, runway_ss = ss.spawn(2)
    return np.random.default_rng(taxi_ss), np.random.default_rng(runway_ss)


def run_once(schedule: Schedule, assignment: Mapping[str, str], config: SimConfig,
             replication: int = 0) -> SimOutcome:
    """Simulate one replication; randomness derives from (config.seed, replication)."""
    mapping = dict(getattr(assignment, "mapping", assignment))
    taxi_rng, runway_rng = _seed_streams(config.seed, replication)
    runway = RunwayProcess(config.takeoff_params, runway_rng)
    dwell = config.dwell
    n_star = config.n_star

    flights = {f.id: f for f in schedule.flights}
    requests: dict[int, list[str]] = {}
    tow_away: dict[int, list[str]] = {}
    ready_at: dict[int, list[str]] = {}
    for f in schedule.flights:
        gate = mapping.get(f.id)
        if gate is None:
            raise SimulationError(f"assignment has no gate for flight {f.id}")
        if f.has_arrival and f.act_arr is None or f.has_departure and f.act_dep is None:
            raise SimulationError(f"flight {f.id} lacks actual times")
        if f.has_arrival:
            requests.setdefault(f.act_arr, []).append(f.id)
            if not f.has_departure:
                tow_away.setdefault(f.act_arr + dwell, []).append(f.id)
        else:
            requests.setdefault(f.act_dep - dwell, []).append(f.id)
        if f.has_departure:
            ready_at.setdefault(f.act_dep, []).append(f.id)
    if not flights:
        return SimOutcome(0, 0, 0.0, 0.0, 0.0, 0)

    occupant: dict[str, Optional[str]] = {}
    waiting: dict[str, deque] = {}
    at_gate: set[str] = set()
    gone: set[str] = set()
    promoted: set[str] = set()
    due: set[str] = set()  # departures whose ready time has passed
    queue: list[tuple[int, str]] = []  # (entry minute, flight id) in FCFS order
    entry: dict[str, int] = {}
    conflicts: list[GateConflictEvent] = []
    open_conflicts: dict[str, list[GateConflictEvent]] = {}
    taxi_arrivals: dict[int, list[str]] = {}
    runway_queue: deque = deque()
    records: dict[str, dict] = {}
    n_surface = 0

    def occupy(fid: str, gate: str, t: int):
        occupant[gate] = fid
        at_gate.add(fid)
        if fid in due and fid not in entry:
            entry[fid] = t
            queue.append((t, fid))

    def release(gate: str, t: int):
        fid = occupant.get(gate)
        if fid is not None:
            at_gate.discard(fid)
            gone.add(fid)
            for ev in open_conflicts.pop(fid, []):
                ev.release_min = t
        occupant[gate] = None
        w = waiting.get(gate)
        if w:
            occupy(w.popleft(), gate, t)

    total_deps = sum(1 for f in flights.values() if f.has_departure)
    times = [t for d in (requests, tow_away, ready_at) for t in d]
    t = min(times)
    t_last_event = max(times)
    limit = t_last_event + config.max_overrun
    done_deps = 0

    while True:
        # 1. gate requests
        for fid in sorted(requests.get(t, ())):
            gate = mapping[fid]
            occ = occupant.get(gate)
            if occ is None and not waiting.get(gate):
                occupy(fid, gate, t)
                continue
            blocker = occ if occ is not None else waiting[gate][-1]
            ev = GateConflictEvent(fid, gate, blocker, t, -1)
            conflicts.append(ev)
            open_conflicts.setdefault(blocker, []).append(ev)
            promoted.add(blocker)
            waiting.setdefault(gate, deque()).append(fid)
            if occ is not None and not flights[occ].has_departure:
                release(gate, t)  # towed away on demand
        # 2. scheduled tow-aways
        for fid in sorted(tow_away.get(t, ())):
            gate = mapping[fid]
            if occupant.get(gate) == fid:
                release(gate, t)
        # 3. departures become ready
        for fid in sorted(ready_at.get(t, ())):
            due.add(fid)
            if fid in at_gate and fid not in entry:
                entry[fid] = t
                queue.append((t, fid))
        # 4. push-back clearance; a freed gate can make a waiting turn ready, so repeat
        while queue:
            snapshot = sorted(queue, key=lambda q: (q[1] not in promoted, q))
            cleared = False
            for _, fid in snapshot:
                if fid in promoted or n_star is None or n_surface < n_star:
                    f = flights[fid]
                    fit = config.taxi_fit(f.terminal)
                    tau = max(1, int(round(taxi_rng.lognormal(fit.mu_log, fit.sigma_log))))
                    records[fid] = dict(flight_id=fid, gate=mapping[fid], terminal=f.terminal,
                                        ready_min=entry[fid], pushback_min=t, taxi_nominal=tau,
                                        npb=n_surface, promoted=fid in promoted)
                    n_surface += 1
                    taxi_arrivals.setdefault(t + tau, []).append(fid)
                    release(mapping[fid], t)
                    cleared = True
            queue[:] = sorted(q for q in queue if q[1] not in records)
            if not cleared or all(q in snapshot for q in queue):
                break
        # 5. runway
        for fid in taxi_arrivals.pop(t, ()):
            runway_queue.append(fid)
        served = runway.step(len(runway_queue))
        for _ in range(served):
            fid = runway_queue.popleft()
            records[fid]["takeoff_min"] = t
            n_surface -= 1
            done_deps += 1

        if t >= t_last_event and done_deps == total_deps and not any(waiting.values()):
            break
        t += 1
        if t > limit:
            raise SimulationError("simulation did not drain; check schedule times and runway rates")

    recs = [FlightRecord(**records[fid]) for fid in sorted(records, key=lambda k: (records[k]["pushback_min"], k))]
    holds = np.array([r.hold for r in recs], dtype=float)
    taxis = np.array([r.taxi_out for r in recs], dtype=float)
    held = holds > 0
    return SimOutcome(
        gate_conflicts=len(conflicts),
        gate_held_departures=int(held.sum()),
        mean_hold_min=float(holds[held].mean()) if held.any() else 0.0,
        mean_hold_all_min=float(holds.mean()) if holds.size else 0.0,
        mean_taxi_out_min=float(taxis.mean()) if taxis.size else 0.0,
        departures=len(recs),
        records=recs,
        conflicts=conflicts,
    )


@dataclass
class ReplicatedOutcome:
    mean: dict
    outcomes: list

    def __getitem__(self, key):
        return self.mean[key]

    @property
    def held_fraction(self) -> float:
        d = self.mean["departures"]
        return self.mean["gate_held_departures"] / d if d else 0.0


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GATEHOLD_THREADS", "1")))
    except ValueError:
        return 1


def _run_one(args):
    schedule, mapping, config, rep = args
    return run_once(schedule, mapping, config, rep)


def run_replicated(schedule: Schedule, assignment: Mapping[str, str], config: SimConfig,
                   workers: Optional[int] = None) -> ReplicatedOutcome:
    """Run ``config.replications`` independent replications and average every metric."""
    mapping = dict(getattr(assignment, "mapping", assignment))
    workers = workers or _worker_count()
    jobs = [(schedule, mapping, config, r) for r in range(config.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    mean = {k: float(np.mean([o.metrics()[k] for o in outcomes])) for k in METRIC_KEYS}
    return ReplicatedOutcome(mean, outcomes)


@dataclass
class SweepRow:
    n_star: Optional[int]
    mean_hold_all_min: float
    mean_taxi_out_min: float
    gate_conflicts: float
    gate_held_departures: float
    mean_hold_min: float

    @property
    def total(self) -> float:
        return self.mean_hold_all_min + self.mean_taxi_out_min

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hold_plus_taxi_min"] = self.total
        return d


@dataclass
class SweepResult:
    rows: list
    baseline: SweepRow  # no gate holding

    def row(self, n_star: int) -> SweepRow:
        for r in self.rows:
            if r.n_star == n_star:
                return r
        raise KeyError(n_star)


def _sweep_row(n_star, rep: ReplicatedOutcome) -> SweepRow:
    m = rep.mean
    return SweepRow(n_star, m["mean_hold_all_min"], m["mean_taxi_out_min"], m["gate_conflicts"],
                    m["gate_held_departures"], m["mean_hold_min"])


def sweep_n_star(schedule: Schedule, assignment: Mapping[str, str], config: SimConfig,
                 n_star_range: Sequence[int]) -> SweepResult:
    """Replicated runs for each threshold plus the no-holding baseline.

    All thresholds reuse the same replication seeds (common random numbers).
    """
    n_star_range = list(n_star_range)
    if not n_star_range:
        raise ValueError("empty n_star range")
    rows = [_sweep_row(n, run_replicated(schedule, assignment, config.with_n_star(n))) for n in n_star_range]
    base = _sweep_row(None, run_replicated(schedule, assignment, config.with_n_star(None)))
    return SweepResult(rows, base)


def count_conflicts_static(schedule: Schedule, assignment: Mapping[str, str],
                           dwell: int = UNPAIRED_DWELL) -> int:
    """Conflicts implied by actual times alone, with every departure pushing back when ready.

    Flights at each gate are taken in order of actual gate-in; a conflict is
    a flight whose gate-in is not later than the previous flight's gate-out.
    """
    mapping = dict(getattr(assignment, "mapping", assignment))
    by_gate: dict[str, list[tuple[int, int, str]]] = {}
    for f in schedule.flights:
        g = mapping.get(f.id)
        if g is None:
            continue
        t_in, t_out = f.actual_window(dwell)
        by_gate.setdefault(g, []).append((t_in, t_out, f.id))
    count = 0
    for items in by_gate.values():
        items.sort()
        for prev, cur in zip(items, items[1:]):
            if cur[0] <= prev[1]:
                count += 1
    return count


def departure_events(outcome: SimOutcome) -> list[tuple[int, int]]:
    """(push-back, take-off) pairs sorted by push-back, for N(t)/T(t) analysis."""
    return sorted((r.pushback_min, r.takeoff_min) for r in outcome.records)
