"""Flights, gates and schedules: CSV ingestion, turn pairing and synthetic generation.

All times are integer minutes. A ``Flight`` is either a paired turn (both an
arrival and a departure on the same aircraft), an arrival-only leg or a
departure-only leg. Unpaired legs occupy their gate for ``UNPAIRED_DWELL``
minutes, standing in for the tow to or from a remote stand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

UNPAIRED_DWELL = 30
EQUIPMENT_CLASSES = ("small", "large")

SCHEDULE_COLUMNS = [
    "flight_id",
    "airline",
    "terminal",
    "equipment_class",
    "sched_arr",
    "sched_dep",
    "act_arr",
    "act_dep",
    "current_gate",
]
GATE_COLUMNS = ["gate_id", "terminal", "airlines", "equipment"]


class ScheduleError(ValueError):
    """Malformed schedule input."""


@dataclass(frozen=True)
class Flight:
    id: str
    airline: str
    terminal: str
    equipment_class: str
    sched_arr: Optional[int] = None
    sched_dep: Optional[int] = None
    act_arr: Optional[int] = None
    act_dep: Optional[int] = None
    current_gate: Optional[str] = None

    def __post_init__(self):
        if self.sched_arr is None and self.sched_dep is None:
            raise ScheduleError(f"flight {self.id}: needs a scheduled arrival or departure")
        if self.sched_arr is not None and self.sched_dep is not None and self.sched_arr >= self.sched_dep:
            raise ScheduleError(f"flight {self.id}: arrival after departure")
        if self.act_arr is not None and self.act_dep is not None and self.act_arr >= self.act_dep:
            raise ScheduleError(f"flight {self.id}: actual arrival after actual departure")
        if self.equipment_class not in EQUIPMENT_CLASSES:
            raise ScheduleError(f"flight {self.id}: unknown equipment class {self.equipment_class!r}")

    @property
    def has_arrival(self) -> bool:
        return self.sched_arr is not None

    @property
    def has_departure(self) -> bool:
        return self.sched_dep is not None

    @property
    def is_turn(self) -> bool:
        return self.has_arrival and self.has_departure

    def window(self, dwell: int = UNPAIRED_DWELL) -> tuple[int, int]:
        """Scheduled (gate-in, gate-out) times."""
        if self.is_turn:
            return self.sched_arr, self.sched_dep
        if self.has_arrival:
            return self.sched_arr, self.sched_arr + dwell
        return self.sched_dep - dwell, self.sched_dep

    def actual_window(self, dwell: int = UNPAIRED_DWELL) -> tuple[int, int]:
        """Actual (gate-in, gate-out) times assuming immediate push-back when ready."""
        if self.is_turn:
            return self.act_arr, self.act_dep
        if self.has_arrival:
            return self.act_arr, self.act_arr + dwell
        return self.act_dep - dwell, self.act_dep

    def times(self) -> list[int]:
        return [t for t in (self.sched_arr, self.sched_dep, self.act_arr, self.act_dep) if t is not None]


@dataclass(frozen=True)
class Gate:
    id: str
    terminal: str
    airlines: frozenset
    equipment: frozenset

    def __post_init__(self):
        if not self.airlines or not self.equipment:
            raise ScheduleError(f"gate {self.id}: empty compatibility set")

    def accepts(self, flight: Flight) -> bool:
        return flight.airline in self.airlines and flight.equipment_class in self.equipment


@dataclass(frozen=True)
class GateOccupancy:
    flight: str
    gate: Optional[str]
    t_in: int
    t_out: int

    def __post_init__(self):
        if self.t_in >= self.t_out:
            raise ScheduleError(f"occupancy of {self.flight}: t_in must precede t_out")


@dataclass
class Schedule:
    flights: list[Flight]
    gates: list[Gate] = field(default_factory=list)
    horizon: Optional[tuple[int, int]] = None

    def __post_init__(self):
        ids = [f.id for f in self.flights]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ScheduleError(f"duplicate flight id {dup}")
        gate_ids = [g.id for g in self.gates]
        if len(set(gate_ids)) != len(gate_ids):
            raise ScheduleError("duplicate gate id")
        if self.horizon is None:
            times = [t for f in self.flights for t in f.times()]
            self.horizon = (min(times), max(times)) if times else (0, 0)
        lo, hi = self.horizon
        for f in self.flights:
            if any(t < lo or t > hi for t in f.times()):
                raise ScheduleError(f"flight {f.id}: times outside horizon {self.horizon}")

    def __len__(self):
        return len(self.flights)

    def flight(self, flight_id: str) -> Flight:
        return self._by_id()[flight_id]

    def _by_id(self) -> dict[str, Flight]:
        return {f.id: f for f in self.flights}

    def gate_map(self) -> dict[str, Gate]:
        return {g.id: g for g in self.gates}

    def current_assignment(self) -> dict[str, str]:
        return {f.id: f.current_gate for f in self.flights if f.current_gate is not None}

    def departures(self) -> list[Flight]:
        return [f for f in self.flights if f.has_departure]


# --------------------------------------------------------------------------
# CSV I/O


def _parse_time(cell: str) -> Optional[int]:
    cell = cell.strip()
    if not cell:
        return None
    try:
        return int(cell)
    except ValueError:
        pass
    ts = datetime.fromisoformat(cell)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return math.floor(ts.timestamp() / 60)


def _fmt(v) -> str:
    return "" if v is None else str(v)


def load_schedule(path, gates_path=None, horizon=None) -> Schedule:
    """Read a schedule CSV (and optionally a gates CSV) into a ``Schedule``.

    Timestamps may be integer minutes or ISO-8601 strings; an empty cell
    means the value is absent. Errors carry the 1-based data row number.
    """
    flights = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCHEDULE_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ScheduleError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=1):
            try:
                flights.append(
                    Flight(
                        id=row["flight_id"].strip(),
                        airline=row["airline"].strip(),
                        terminal=row["terminal"].strip(),
                        equipment_class=row["equipment_class"].strip(),
                        sched_arr=_parse_time(row["sched_arr"]),
                        sched_dep=_parse_time(row["sched_dep"]),
                        act_arr=_parse_time(row["act_arr"]),
                        act_dep=_parse_time(row["act_dep"]),
                        current_gate=row["current_gate"].strip() or None,
                    )
                )
            except ScheduleError as exc:
                raise ScheduleError(f"{path}: row {row_no}: {exc}") from None
            except (ValueError, TypeError) as exc:
                raise ScheduleError(f"{path}: row {row_no}: parse error: {exc}") from None
    gates = load_gates(gates_path) if gates_path is not None else []
    return Schedule(flights, gates, tuple(horizon) if horizon is not None else None)


def load_gates(path) -> list[Gate]:
    gates = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=1):
            try:
                gates.append(
                    Gate(
                        id=row["gate_id"].strip(),
                        terminal=row["terminal"].strip(),
                        airlines=frozenset(a for a in row["airlines"].split(";") if a),
                        equipment=frozenset(e for e in row["equipment"].split(";") if e),
                    )
                )
            except (KeyError, ScheduleError) as exc:
                raise ScheduleError(f"{path}: row {row_no}: {exc}") from None
    return gates


def write_schedule(schedule: Schedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEDULE_COLUMNS)
        for f in schedule.flights:
            w.writerow(
                [f.id, f.airline, f.terminal, f.equipment_class, _fmt(f.sched_arr), _fmt(f.sched_dep),
                 _fmt(f.act_arr), _fmt(f.act_dep), _fmt(f.current_gate)]
            )


def write_gates(gates: Iterable[Gate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GATE_COLUMNS)
        for g in gates:
            w.writerow([g.id, g.terminal, ";".join(sorted(g.airlines)), ";".join(sorted(g.equipment))])


def load_assignment(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {row["flight_id"]: row["gate_id"] for row in csv.DictReader(fh)}


def write_assignment(mapping: Mapping[str, str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flight_id", "gate_id"])
        for fid in sorted(mapping):
            w.writerow([fid, mapping[fid]])


# --------------------------------------------------------------------------
# Pairing


def split_turns(flights: Iterable[Flight]) -> tuple[list[Flight], list[Flight]]:
    """Break turns back into arrival-only and departure-only legs.

    Turn ids have the form ``"<arrival id>+<departure id>"``.
    """
    arrivals, departures = [], []
    for f in flights:
        if f.is_turn:
            a_id, _, d_id = f.id.partition("+")
            if not d_id:
                a_id, d_id = f.id + ".arr", f.id + ".dep"
            arrivals.append(replace(f, id=a_id, sched_dep=None, act_dep=None))
            departures.append(replace(f, id=d_id, sched_arr=None, act_arr=None))
        elif f.has_arrival:
            arrivals.append(f)
        else:
            departures.append(f)
    return arrivals, departures


def pair_flights(
    arrivals: Sequence[Flight],
    departures: Sequence[Flight],
    current_assignment: Optional[Mapping[str, str]] = None,
) -> list[Flight]:
    """Merge arrival and departure legs into turns.

    Legs are grouped by their current gate (``current_assignment`` overrides
    ``Flight.current_gate``) and walked in scheduled-time order. An arrival
    is paired only with the departure that immediately follows it at the gate
    and carries the same equipment class. Anything else stays an unpaired leg,
    which covers the towing pattern arr1, arr2, dep2, dep1: the inner pair is
    merged and the outer aircraft is treated as towed off and back.
    """
    mapping = dict(getattr(current_assignment, "mapping", current_assignment) or {})

    def gate_of(f: Flight):
        return mapping.get(f.id, f.current_gate)

    by_gate: dict[object, list[tuple[int, int, str, Flight]]] = {}
    for f in arrivals:
        by_gate.setdefault(gate_of(f), []).append((f.sched_arr, 1, f.id, f))
    for f in departures:
        # departures sort before arrivals at the same minute: the gate is freed first
        by_gate.setdefault(gate_of(f), []).append((f.sched_dep, 0, f.id, f))

    out: list[Flight] = []
    for gate in sorted(by_gate, key=lambda g: (g is None, str(g))):
        events = sorted(by_gate[gate], key=lambda e: e[:3])
        i = 0
        while i < len(events):
            _, kind, _, f = events[i]
            if gate is not None and kind == 1 and i + 1 < len(events):
                _, nkind, _, nxt = events[i + 1]
                if nkind == 0 and nxt.equipment_class == f.equipment_class:
                    out.append(_merge(f, nxt, gate))
                    i += 2
                    continue
            out.append(replace(f, current_gate=gate) if gate is not None else f)
            i += 1
    out.sort(key=lambda f: (f.window()[0], f.id))
    return out


def _merge(arr: Flight, dep: Flight, gate) -> Flight:
    return Flight(
        id=f"{arr.id}+{dep.id}",
        airline=dep.airline,
        terminal=dep.terminal,
        equipment_class=dep.equipment_class,
        sched_arr=arr.sched_arr,
        sched_dep=dep.sched_dep,
        act_arr=arr.act_arr,
        act_dep=dep.act_dep,
        current_gate=gate,
    )


# --------------------------------------------------------------------------
# Synthetic schedules


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic schedule generator.

    The generator builds the current (airline) assignment gate by gate:
    each gate is a chain of turns separated by lognormal gaps whose mean is
    ``target_mean_separation``. Departure pushes are pulled toward the
    banks described by ``bank_centers`` by rejection sampling.
    """

    terminals: dict = field(default_factory=lambda: {"A": 14, "B": 28, "C": 34, "D": 24})
    # airline -> list of terminals it may use, and relative share of turns
    airlines: dict = field(
        default_factory=lambda: {
            "AA": ["A"], "UA": ["B"], "US": ["C"], "DL": ["A", "D"], "NW": ["D"], "CO": ["B"],
        }
    )
    small_gate_fraction: float = 0.2
    large_share: float = 0.6
    spare_gate_fraction: float = 0.1
    n_turns: Optional[int] = None
    ops_start: int = 360
    ops_end: int = 1350
    horizon: tuple = (0, 1800)
    turn_mean: float = 60.0
    turn_sd: float = 15.0
    turn_min: int = 35
    target_mean_separation: float = 94.0
    separation_sd: float = 110.0
    bank_centers: tuple = (480, 660, 840, 1020, 1200)
    bank_width: float = 40.0
    bank_floor: float = 0.25
    tow_prob: float = 0.03
    dep_delay: tuple = (3.0, 0.8, 25.0)
    arr_delay: tuple = (2.5, 0.6, 10.0)
    delay_clip: tuple = (-60, 240)
    min_turn: int = 20

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ScheduleError(f"unknown generator options {sorted(unknown)}")
        for key in ("horizon", "bank_centers", "dep_delay", "arr_delay", "delay_clip"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)


def make_gates(config: GeneratorConfig, rng: np.random.Generator) -> list[Gate]:
    gates = []
    for term in sorted(config.terminals):
        airlines = frozenset(a for a, terms in config.airlines.items() if term in terms)
        if not airlines:
            continue
        n = config.terminals[term]
        n_small = int(round(n * config.small_gate_fraction))
        small_idx = set(rng.choice(n, size=n_small, replace=False).tolist()) if n_small else set()
        for i in range(n):
            equip = frozenset({"small"}) if i in small_idx else frozenset(EQUIPMENT_CLASSES)
            gates.append(Gate(f"{term}{i + 1:02d}", term, airlines, equip))
    return gates


def _lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    s2 = math.log(1 + (sd / mean) ** 2)
    return math.log(mean) - s2 / 2, math.sqrt(s2)


def _sample_delay(rng, params, clip) -> int:
    mu, sigma, shift = params
    return int(np.clip(round(rng.lognormal(mu, sigma) - shift), clip[0], clip[1]))


def gen_synthetic(config: Optional[GeneratorConfig] = None, seed: int = 0) -> Schedule:
    """Generate a synthetic schedule with an embedded current gate assignment.

    Returns turns plus a few towed (unpaired) legs, each carrying
    ``current_gate``. Deterministic in ``seed``. The mean consecutive gate
    separation of the embedded assignment is steered to
    ``config.target_mean_separation`` by a short fixed-point correction of
    the gap distribution.
    """
    config = config or GeneratorConfig()
    if config.target_mean_separation <= 0:
        raise ScheduleError("target_mean_separation must be positive")
    if config.ops_end <= config.ops_start:
        raise ScheduleError("empty operating window")
    gap_mean = config.target_mean_separation
    schedule = None
    for _ in range(6):
        schedule, achieved = _generate(config, seed, gap_mean)
        if config.n_turns is not None or achieved is None:
            break
        if abs(achieved - config.target_mean_separation) <= 0.02 * config.target_mean_separation:
            break
        gap_mean *= config.target_mean_separation / achieved
    return schedule


def _bank_intensity(config: GeneratorConfig, t: float) -> float:
    if not config.bank_centers:
        return 1.0
    peak = max(math.exp(-0.5 * ((t - c) / config.bank_width) ** 2) for c in config.bank_centers)
    return config.bank_floor + (1 - config.bank_floor) * peak


def _generate(config: GeneratorConfig, seed: int, gap_mean: float):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C4ED]))
    gates = make_gates(config, rng)
    if not gates:
        raise ScheduleError("configuration yields no gates")
    n_spare = int(math.floor(len(gates) * config.spare_gate_fraction))
    spare = set(rng.choice(len(gates), size=n_spare, replace=False).tolist()) if n_spare else set()
    active = [g for i, g in enumerate(gates) if i not in spare]
    if not active:
        raise ScheduleError("all gates are spares")

    airline_names = sorted(config.airlines)
    gap_mu, gap_sigma = _lognormal_params(gap_mean, config.separation_sd)
    turn_mu, turn_sigma = _lognormal_params(config.turn_mean, config.turn_sd)
    lo, hi = config.horizon
    max_turns = config.n_turns

    flights: list[Flight] = []
    seps: list[int] = []
    counter = 0

    def next_id():
        nonlocal counter
        counter += 1
        return counter

    def new_turn(gate, t_in, airline, equip):
        dur = max(config.turn_min, int(round(rng.lognormal(turn_mu, turn_sigma))))
        t_out = t_in + dur
        d_arr = _sample_delay(rng, config.arr_delay, config.delay_clip)
        d_dep = _sample_delay(rng, config.dep_delay, config.delay_clip)
        act_arr = t_in + d_arr
        act_dep = max(t_out + d_dep, act_arr + config.min_turn)
        return t_out, dict(airline=airline, terminal=gate.terminal, equipment_class=equip,
                           sched_arr=t_in, sched_dep=t_out, act_arr=act_arr, act_dep=act_dep,
                           current_gate=gate.id)

    # round-robin over gates in time order so that an n_turns cap spreads evenly
    cursors = {}
    for g in active:
        start = config.ops_start + int(rng.integers(0, 90))
        cursors[g.id] = start
    last_out: dict[str, Optional[int]] = {g.id: None for g in active}
    open_gates = list(active)
    while open_gates:
        if max_turns is not None and counter >= max_turns:
            break
        open_gates.sort(key=lambda g: (cursors[g.id], g.id))
        gate = open_gates[0]
        t_in = cursors[gate.id]
        airlines = [a for a in airline_names if a in gate.airlines]
        airline = airlines[int(rng.integers(len(airlines)))]
        equip = "large" if ("large" in gate.equipment and rng.random() < config.large_share) else "small"
        t_out, turn = new_turn(gate, t_in, airline, equip)
        if t_out > config.ops_end:
            open_gates.pop(0)
            continue
        # bias push-backs toward banks: reject and retry a little later
        if rng.random() > _bank_intensity(config, t_out):
            cursors[gate.id] = t_in + int(rng.integers(5, 20))
            continue
        if last_out[gate.id] is not None:
            seps.append(t_in - last_out[gate.id])
        k = next_id()
        if rng.random() < config.tow_prob and t_out - t_in > 0:
            # towed aircraft: arrives, is towed away, an inner turn uses the gate, it returns to depart
            arr_leg = Flight(f"A{k:04d}", airline, gate.terminal, equip, sched_arr=t_in,
                             act_arr=turn["act_arr"], current_gate=gate.id)
            inner_in = t_in + UNPAIRED_DWELL + int(rng.integers(5, 25))
            j = next_id()
            inner_out, inner = new_turn(gate, inner_in, airline, equip)
            dep_sched = inner_out + int(rng.integers(5, 25)) + UNPAIRED_DWELL
            d_dep = _sample_delay(rng, config.dep_delay, config.delay_clip)
            dep_leg = Flight(f"D{k:04d}", airline, gate.terminal, equip, sched_dep=dep_sched,
                             act_dep=max(dep_sched + d_dep, inner["act_dep"] + UNPAIRED_DWELL + 1),
                             current_gate=gate.id)
            flights += [arr_leg, dep_leg, Flight(f"A{j:04d}+D{j:04d}", **inner)]
            t_out = dep_sched
        else:
            flights.append(Flight(f"A{k:04d}+D{k:04d}", **turn))
        last_out[gate.id] = t_out
        gap = int(round(rng.lognormal(gap_mu, gap_sigma)))
        cursors[gate.id] = t_out + gap

    if max_turns is not None and counter < max_turns:
        raise ScheduleError(
            f"infeasible configuration: only {counter} of {max_turns} turns fit on {len(active)} gates"
        )
    for f in flights:
        if any(t < lo or t > hi for t in f.times()):
            raise ScheduleError(f"generated flight {f.id} falls outside horizon {config.horizon}")
    flights.sort(key=lambda f: (f.window()[0], f.id))
    achieved = float(np.mean(seps)) if seps else None
    return Schedule(flights, gates, (lo, hi)), achieved


def separation_stats(schedule_or_flights, mapping: Mapping[str, str], dwell: int = UNPAIRED_DWELL) -> dict:
    """Mean and standard deviation of consecutive same-gate scheduled separations."""
    flights = getattr(schedule_or_flights, "flights", schedule_or_flights)
    by_gate: dict[str, list[tuple[int, int]]] = {}
    for f in flights:
        g = mapping.get(f.id)
        if g is not None:
            by_gate.setdefault(g, []).append(f.window(dwell))
    seps = []
    for windows in by_gate.values():
        windows.sort()
        seps += [b[0] - a[1] for a, b in zip(windows, windows[1:])]
    if not seps:
        return {"mean": 0.0, "std": 0.0, "count": 0, "gates_used": len(by_gate)}
    arr = np.asarray(seps, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "count": len(seps), "gates_used": len(by_gate)}
