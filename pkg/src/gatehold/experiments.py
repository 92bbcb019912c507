"""End-to-end studies: synthetic airport, disturbance fit, robust assignment, gate-holding sweep."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .assignment import (Assignment, AssignmentError, ProblemInstance, greedy_initial, objective,
                         separation_summary, tabu_search)
from .calibration import (REFERENCE_PARAMS, REFERENCE_STATED_MEAN, REFERENCE_STATED_STD,
                          CalibrationError, TakeoffParams, TaxiFit, ThroughputCurve, build_NT,
                          correlation_scan, detect_saturation, fit_takeoff_params, fit_taxi_by_terminal)
from .overlap import DisturbanceModel, delays_from_flights
from .schedule import (GeneratorConfig, Schedule, gen_synthetic, pair_flights, separation_stats,
                       split_turns, write_assignment, write_gates, write_schedule)
from .simulation import SimConfig, SweepResult, departure_events, run_replicated, sweep_n_star

SCHEMA_VERSION = 1
MODES = ("no_holding", "holding")
ASSIGNMENTS = ("baseline", "robust")

# stage tags for seed derivation: stage seed = SeedSequence([master, tag]) -> one uint32
STAGE_TAGS = {"generate": 1, "assign": 2, "simulate": 3}


class StudyError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def stage_seed(master_seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(master_seed), STAGE_TAGS[stage]]).generate_state(1)[0])


@dataclass
class AirportProfile:
    name: str
    generator: GeneratorConfig
    n_star_default: int
    takeoff_params: Optional[TakeoffParams] = None
    # (mu, sigma) targets; when takeoff_params is None the runway model is fitted to them
    calibration_targets: Optional[tuple] = None
    taxi_median: dict = field(default_factory=dict)  # terminal -> median nominal taxi-out, minutes
    taxi_sigma: float = 0.3
    sweep_range: tuple = (10, 20)
    n_star_tolerance: float = 0.1
    replications: int = 15
    tabu_budget: int = 1000
    t_buff: float = 0.0

    def __post_init__(self):
        if self.n_star_default < 1:
            raise ValueError("n_star_default must be at least 1")
        if self.takeoff_params is None and self.calibration_targets is None:
            raise ValueError(f"profile {self.name!r} needs take-off params or calibration targets")

    def runway_params(self) -> TakeoffParams:
        if self.takeoff_params is not None:
            return self.takeoff_params
        mu, sigma = self.calibration_targets
        return fit_takeoff_params(mu, sigma).params

    def taxi_fits(self) -> dict[str, TaxiFit]:
        return {t: TaxiFit(t, math.log(self.taxi_median.get(t, 12.0)), self.taxi_sigma, 0)
                for t in sorted(self.generator.terminals)}

    def sim_config(self, params: Optional[TakeoffParams] = None, seed: int = 0) -> SimConfig:
        return SimConfig(takeoff_params=params or self.runway_params(), taxi_fits=self.taxi_fits(),
                         replications=self.replications, seed=seed, t_buff=self.t_buff)


def lga_profile() -> AirportProfile:
    """Single departure runway, crowded gates."""
    return AirportProfile(
        name="lga",
        generator=GeneratorConfig(),
        n_star_default=14,
        takeoff_params=REFERENCE_PARAMS,
        calibration_targets=(REFERENCE_PARAMS.mean(), REFERENCE_STATED_STD),
        taxi_median={"A": 12.0, "B": 12.0, "C": 12.0, "D": 12.0},
        sweep_range=(10, 20),
    )


def hub_profile() -> AirportProfile:
    """Two departure runways served as one aggregate process, longer taxi, two big carriers."""
    gen = GeneratorConfig(
        terminals={"T": 20, "A": 30, "B": 30, "C": 30, "D": 26, "E": 24},
        airlines={"CA": ["T", "A", "B", "C", "D"], "CB": ["E"], "XX": ["T"], "YY": ["D", "E"]},
    )
    return AirportProfile(
        name="hub",
        generator=gen,
        n_star_default=33,
        calibration_targets=(0.95, 0.15),
        taxi_median={t: 18.0 for t in gen.terminals},
        sweep_range=(25, 40),
    )


def tiny_profile() -> AirportProfile:
    """Ten turns on three gates; a smoke-test profile."""
    gen = GeneratorConfig(terminals={"A": 3}, airlines={"AA": ["A"]}, n_turns=10, tow_prob=0.0,
                          spare_gate_fraction=0.0, small_gate_fraction=0.0)
    return AirportProfile(
        name="tiny",
        generator=gen,
        n_star_default=2,
        takeoff_params=REFERENCE_PARAMS,
        taxi_median={"A": 12.0},
        sweep_range=(1, 4),
        replications=3,
        tabu_budget=100,
    )


PROFILES = {"lga": lga_profile, "hub": hub_profile, "tiny": tiny_profile}


def get_profile(name: str) -> AirportProfile:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def mk_n_star_from_profile(profile: AirportProfile, sweep: SweepResult,
                           tolerance: Optional[float] = None) -> int:
    """Smallest swept N* whose hold + taxi stays within ``tolerance`` minutes of the no-holding taxi."""
    tol = profile.n_star_tolerance if tolerance is None else tolerance
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    target = sweep.baseline.mean_taxi_out_min
    for row in sorted(sweep.rows, key=lambda r: r.n_star):
        if abs(row.total - target) <= tol:
            return int(row.n_star)
    raise ValueError(f"no N* in the sweep keeps hold+taxi within {tol} min of {target:.3f}")


# --------------------------------------------------------------------------
# Report


@dataclass
class Cell:
    gate_conflicts: float
    gate_held_departures: float
    mean_hold_min: float
    mean_hold_all_min: float
    mean_taxi_out_min: float
    departures: float

    @property
    def held_fraction(self) -> float:
        return self.gate_held_departures / self.departures if self.departures else 0.0

    def to_dict(self) -> dict:
        return {
            "gate_conflicts": self.gate_conflicts,
            "gate_held_departures": self.gate_held_departures,
            "held_fraction": self.held_fraction,
            "mean_hold_min": self.mean_hold_min,
            "mean_hold_all_min": self.mean_hold_all_min,
            "mean_taxi_out_min": self.mean_taxi_out_min,
            "departures": self.departures,
        }


@dataclass
class ComparisonReport:
    profile: str
    master_seed: int
    n_star: int
    cells: dict  # (assignment, mode) -> Cell
    separation: dict  # assignment -> {"mean", "std", "count"}
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = {(a, m) for a in ASSIGNMENTS for m in MODES}
        if set(self.cells) != expected:
            raise ValueError("a comparison report needs exactly the four assignment x mode cells")

    def cell(self, assignment: str, mode: str) -> Cell:
        return self.cells[(assignment, mode)]

    def conflict_reduction(self, mode: str) -> Optional[float]:
        base = self.cell("baseline", mode).gate_conflicts
        if base == 0:
            return None
        return 1.0 - self.cell("robust", mode).gate_conflicts / base

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "profile": self.profile,
            "master_seed": self.master_seed,
            "n_star": self.n_star,
            "cells": {f"{a}/{m}": self.cells[(a, m)].to_dict() for a in ASSIGNMENTS for m in MODES},
            "conflict_reduction": {m: self.conflict_reduction(m) for m in MODES},
            "separation": self.separation,
            **self.details,
        }

    def to_json(self) -> str:
        return json.dumps(_rounded(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def to_markdown(self) -> str:
        lines = [f"# Gate-holding study: {self.profile} (seed {self.master_seed})", "",
                 f"Gate holding threshold N* = {self.n_star}.", "",
                 "| assignment | holding | conflicts | held | held % | mean hold | mean taxi |",
                 "|---|---|---|---|---|---|---|"]
        for a in ASSIGNMENTS:
            for m in MODES:
                c = self.cells[(a, m)]
                lines.append(f"| {a} | {'yes' if m == 'holding' else 'no'} | {c.gate_conflicts:.1f} | "
                             f"{c.gate_held_departures:.1f} | {100 * c.held_fraction:.1f} | "
                             f"{c.mean_hold_min:.2f} | {c.mean_taxi_out_min:.2f} |")
        lines += ["", "| assignment | mean separation | std separation | pairs |", "|---|---|---|---|"]
        for a in ASSIGNMENTS:
            s = self.separation[a]
            lines.append(f"| {a} | {s['mean']:.1f} | {s['std']:.1f} | {s['count']} |")
        lines.append("")
        for m in MODES:
            r = self.conflict_reduction(m)
            if r is not None:
                lines.append(f"Conflict reduction ({m.replace('_', ' ')}): {100 * r:.1f}%")
        return "\n".join(lines) + "\n"


def _rounded(obj, digits: int = 6):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return round(obj, digits)
    if isinstance(obj, (np.floating,)):
        return _rounded(float(obj), digits)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, digits) for v in obj]
    return obj


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return v


# --------------------------------------------------------------------------
# Pipeline


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StudyError):
            raise StudyError(self.name, exc) from exc
        return False


def robust_assignment(schedule: Schedule, model: DisturbanceModel, budget: int, seed: int,
                      t_buff: float = 0.0):
    """Tabu search from a greedy start, or from the current assignment when greedy gets stuck."""
    inst = ProblemInstance.from_schedule(schedule, t_buff=t_buff, A=model.A, B=model.B)
    try:
        initial = greedy_initial(inst)
        source = "greedy"
    except AssignmentError:
        initial = Assignment(schedule.current_assignment())
        source = "current"
    result = tabu_search(inst, initial=initial, budget=budget, seed=seed)
    return inst, initial, source, result


def _calibration_stage(schedule: Schedule, assignment, config: SimConfig, out: Path) -> dict:
    rep = run_replicated(schedule, assignment, config.with_n_star(None))
    ns, ts, records = [], [], []
    for o in rep.outcomes:
        series = build_NT(departure_events(o))
        ns.append(series.n)
        ts.append(series.rate)
        records += [{"terminal": r.terminal, "npb": r.npb, "taxi_out": r.taxi_out} for r in o.records]
    first = build_NT(departure_events(rep.outcomes[0]))
    scan = correlation_scan(first.n, first.rate, range(-10, 11))
    # sparsely visited N values are dropped and bridged by interpolation
    curve = ThroughputCurve.from_series(np.concatenate(ns), np.concatenate(ts), min_count=30)
    if curve.n.size:
        grid = np.arange(curve.n[0], curve.n[-1] + 1)
        have = np.isin(grid, curve.n)
        count = np.zeros(grid.size, dtype=int)
        count[have] = curve.count
        curve = ThroughputCurve(grid, np.interp(grid, curve.n, curve.mean_t),
                                np.interp(grid, curve.n, curve.std_t), count)
    try:
        saturation = detect_saturation(curve)
    except CalibrationError:
        saturation = None
    fits = fit_taxi_by_terminal(records)
    _write_csv(out / "throughput_curve.csv", ["n", "mean_t", "std_t", "count"],
               [(r["n"], r["mean_t"], r["std_t"], r["count"]) for r in curve.rows()])
    _write_csv(out / "correlation.csv", ["offset", "correlation"],
               [(r["offset"], r["correlation"]) for r in scan.rows()])
    _write_csv(out / "taxi_fits.csv", ["terminal", "mu_log", "sigma_log", "sample_count"],
               [(f.terminal, f.mu_log, f.sigma_log, f.sample_count) for f in fits.values()])
    npb = np.array([r["npb"] for r in records])
    _write_csv(out / "npb_histogram.csv", ["npb", "count"],
               [(int(v), int(c)) for v, c in zip(*np.unique(npb, return_counts=True))] if npb.size else [])
    return {
        "n_star_detected": saturation,
        "best_offset": scan.best_offset,
        "taxi_fits": [f.to_dict() for f in fits.values()],
    }


def _sweep_rows(name: str, sweep: SweepResult) -> list:
    rows = [(name, "none", sweep.baseline)] + [(name, r.n_star, r) for r in sweep.rows]
    return [(a, n, r.mean_hold_all_min, r.mean_taxi_out_min, r.total, r.gate_conflicts,
             r.gate_held_departures) for a, n, r in rows]


def run_study(profile: AirportProfile, master_seed: int = 0,
              out_dir=None) -> ComparisonReport:
    """Run the whole pipeline for one profile; artifacts go to ``out_dir`` when given."""
    out = Path(out_dir) if out_dir is not None else None
    scratch = out
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    else:
        import tempfile
        tmp = tempfile.TemporaryDirectory()
        scratch = Path(tmp.name)

    with _Stage("generate"):
        generated = gen_synthetic(profile.generator, stage_seed(master_seed, "generate"))
        write_gates(generated.gates, scratch / "gates.csv")

    with _Stage("pair"):
        arrivals, departures = split_turns(generated.flights)
        flights = pair_flights(arrivals, departures)
        schedule = Schedule(flights, generated.gates, generated.horizon)
        baseline = schedule.current_assignment()
        write_schedule(schedule, scratch / "schedule.csv")
        write_assignment(baseline, scratch / "baseline_assignment.csv")

    with _Stage("fit-overlap"):
        model, fit_report = DisturbanceModel.from_distributions(delays_from_flights(schedule.flights))
        t = model.table
        _write_csv(scratch / "overlap.csv", ["sep", "expected", "conditional", "probability", "fitted"],
                   list(zip(t["sep"], t["expected"], t["conditional"], t["probability"], model(t["sep"]))))

    with _Stage("assign"):
        inst, initial, source, result = robust_assignment(
            schedule, model, profile.tabu_budget, stage_seed(master_seed, "assign"), profile.t_buff)
        robust = result.best.mapping
        write_assignment(robust, scratch / "robust_assignment.csv")
        _write_csv(scratch / "tabu_trace.csv", ["iteration", "best_objective"], list(enumerate(result.trace)))
        base_obj = objective(inst, Assignment(baseline), check=False)
        separation = {"baseline": separation_summary(inst, Assignment(baseline)),
                      "robust": separation_summary(inst, result.best)}

    with _Stage("calibrate"):
        params = profile.runway_params()
        config = profile.sim_config(params, stage_seed(master_seed, "simulate"))
        calibration = _calibration_stage(schedule, baseline, config, scratch)

    with _Stage("sweep"):
        lo, hi = profile.sweep_range
        sweeps = {"baseline": sweep_n_star(schedule, baseline, config, range(lo, hi + 1)),
                  "robust": sweep_n_star(schedule, robust, config, range(lo, hi + 1))}
        _write_csv(scratch / "sweep.csv",
                   ["assignment", "n_star", "mean_hold_all_min", "mean_taxi_out_min", "hold_plus_taxi_min",
                    "gate_conflicts", "gate_held_departures"],
                   _sweep_rows("baseline", sweeps["baseline"]) + _sweep_rows("robust", sweeps["robust"]))
        try:
            n_star_selected = mk_n_star_from_profile(profile, sweeps["baseline"])
        except ValueError:
            n_star_selected = None

    with _Stage("simulate"):
        cells = {}
        for name, mapping in (("baseline", baseline), ("robust", robust)):
            for mode, n_star in (("no_holding", None), ("holding", profile.n_star_default)):
                rep = run_replicated(schedule, mapping, config.with_n_star(n_star))
                cells[(name, mode)] = Cell(**{k: rep.mean[k] for k in Cell.__dataclass_fields__})

    details = {
        "disturbance": fit_report,
        "takeoff": {
            "params": params.to_dict(),
            "mean": params.mean(),
            "std": params.std(),
            "reference_stated_mean": REFERENCE_STATED_MEAN if params == REFERENCE_PARAMS else None,
            "reference_stated_std": REFERENCE_STATED_STD if params == REFERENCE_PARAMS else None,
            "mean_discrepancy": (params.mean() - REFERENCE_STATED_MEAN) if params == REFERENCE_PARAMS else None,
        },
        "calibration": calibration,
        "assignment": {
            "initial_source": source,
            "baseline_objective": base_obj,
            "initial_objective": result.trace[0],
            "robust_objective": result.trace[-1],
            "iterations": result.iterations,
            "moves": result.moves,
            "A": model.A,
            "B": model.B,
        },
        "schedule": {
            "flights": len(schedule.flights),
            "departures": len(schedule.departures()),
            "gates": len(schedule.gates),
            "generator_separation": separation_stats(schedule, baseline),
        },
        "sweep": {name: [r.to_dict() for r in [s.baseline] + list(s.rows)] for name, s in sweeps.items()},
        "n_star_selected": n_star_selected,
        "seeds": {stage: stage_seed(master_seed, stage) for stage in STAGE_TAGS},
    }
    report = ComparisonReport(profile.name, int(master_seed), profile.n_star_default, cells, separation, details)
    with _Stage("report"):
        (scratch / "report.json").write_text(report.to_json())
        (scratch / "report.md").write_text(report.to_markdown())
    if out is None:
        tmp.cleanup()
    return report
