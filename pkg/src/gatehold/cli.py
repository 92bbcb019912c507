"""Command-line entry point: ``gatehold <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .assignment import Assignment, ProblemInstance, check_feasible, separation_summary, tabu_search
from .calibration import (REFERENCE_PARAMS, REFERENCE_STATED_MEAN, TakeoffParams, TaxiFit,
                          ThroughputCurve, build_NT, correlation_scan, detect_saturation, fit_takeoff_params,
                          fit_taxi_by_terminal, npb_from_events, window_counts)
from .experiments import SCHEMA_VERSION, _rounded, get_profile, robust_assignment, run_study
from .overlap import DisturbanceModel, delays_from_flights
from .schedule import (GeneratorConfig, gen_synthetic, load_assignment, load_schedule, write_assignment,
                       write_gates, write_schedule)
from .simulation import SimConfig, run_once, run_replicated, sweep_n_star


class CliError(Exception):
    pass


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return data


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj: dict, path: Path) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **obj}
    path.write_text(json.dumps(_rounded(payload), sort_keys=True, indent=2) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (f"{v:.6g}" if isinstance(v, float) else v) for v in row])


def _params_from(cfg: dict) -> TakeoffParams:
    p = cfg.get("takeoff_params")
    return TakeoffParams(**p) if p else REFERENCE_PARAMS


def _taxi_from(cfg: dict) -> tuple[dict, Optional[TaxiFit]]:
    fits = {}
    for item in cfg.get("taxi_fits", []):
        fits[item["terminal"]] = TaxiFit(item["terminal"], item["mu_log"], item["sigma_log"],
                                         item.get("sample_count", 0))
    default = None
    if "default_taxi_median" in cfg or not fits:
        default = TaxiFit(None, math.log(cfg.get("default_taxi_median", 12.0)),
                          cfg.get("default_taxi_sigma", 0.3), 0)
    return fits, default


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen_synthetic(args) -> None:
    cfg = _read_config(args.config)
    base = get_profile(args.profile).generator if args.profile else GeneratorConfig()
    gen = GeneratorConfig.from_dict({**base.__dict__, **cfg})
    schedule = gen_synthetic(gen, args.seed)
    out = _out_dir(args.out)
    write_schedule(schedule, out / "schedule.csv")
    write_gates(schedule.gates, out / "gates.csv")
    write_assignment(schedule.current_assignment(), out / "assignment.csv")
    print(f"{len(schedule.flights)} flights on {len(schedule.gates)} gates -> {out}")


def _load_events(path: str):
    """Events grouped by the optional ``day`` column, each day sorted by push-back."""
    days: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"flight_id", "pushback_min", "takeoff_min", "terminal"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise CliError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=1):
            try:
                ev = (int(row["pushback_min"]), int(row["takeoff_min"]), row["terminal"], row["flight_id"])
            except ValueError as exc:
                raise CliError(f"{path}: row {row_no}: {exc}") from None
            days.setdefault(row.get("day") or "", []).append(ev)
    if not days:
        raise CliError(f"{path}: no events")
    return {d: sorted(rows) for d, rows in sorted(days.items())}


def cmd_calibrate(args) -> None:
    cfg = _read_config(args.config)
    days = _load_events(args.inp)
    per_day = [build_NT([(pb, to) for pb, to, _, _ in rows]) for rows in days.values()]
    n_all = np.concatenate([s.n for s in per_day])
    t_all = np.concatenate([s.rate for s in per_day])
    offsets = range(cfg.get("offset_min", -10), cfg.get("offset_max", 10) + 1)
    scan = correlation_scan(per_day[0].n, per_day[0].rate, offsets)
    curve = ThroughputCurve.from_series(n_all, t_all, min_count=cfg.get("min_count", 1)).contiguous()
    n_star = detect_saturation(curve, threshold=cfg.get("threshold", 0.01))
    width = cfg.get("capacity_window", 5)
    counts = np.concatenate([window_counts(s, n_star, n_star + width) for s in per_day])
    if counts.size < 2:
        raise CliError(f"too few minutes with N in [{n_star}, {n_star + width}] to fit the runway model")
    rates = counts / 10.0
    fit = fit_takeoff_params(float(rates.mean()), float(rates.std()), empirical_counts=counts)
    samples = []
    for day, rows in days.items():
        npb = npb_from_events([(pb, to) for pb, to, _, _ in rows])
        samples += [(day, fid, {"terminal": term, "npb": int(k), "taxi_out": to - pb})
                    for (pb, to, term, fid), k in zip(rows, npb)]
    records = [r for _, _, r in samples]
    fits = fit_taxi_by_terminal(records, cfg.get("npb_threshold", 3), cfg.get("min_samples", 30))
    out = _out_dir(args.out)
    _dump({
        "days": len(days),
        "throughput_curve": curve.rows(),
        "n_star": n_star,
        "capacity_window": [n_star, n_star + width],
        "target_mean": float(rates.mean()),
        "target_std": float(rates.std()),
        "takeoff_params": fit.params.to_dict(),
        "takeoff_mean": fit.params.mean(),
        "takeoff_std": fit.params.std(),
        "fit_distance": fit.distance,
        "reference_mean_computed": REFERENCE_PARAMS.mean(),
        "reference_mean_stated": REFERENCE_STATED_MEAN,
        "correlation": scan.rows(),
        "best_offset": scan.best_offset,
        "taxi_fits": [f.to_dict() for f in fits.values()],
    }, out / "calibration.json")
    _write_rows(out / "nt_series.csv", ["day", "t", "n", "rate"],
                [(d, t, n, r) for d, s in zip(days, per_day) for t, n, r in zip(s.t.tolist(), s.n.tolist(), s.rate.tolist())])
    _write_rows(out / "throughput_curve.csv", ["n", "mean_t", "std_t", "count"],
                [(r["n"], r["mean_t"], r["std_t"], r["count"]) for r in curve.rows()])
    _write_rows(out / "correlation.csv", ["offset", "correlation"],
                [(r["offset"], r["correlation"]) for r in scan.rows()])
    _write_rows(out / "taxi_samples.csv", ["day", "flight_id", "terminal", "npb", "taxi_out"],
                [(d, fid, r["terminal"], r["npb"], r["taxi_out"]) for d, fid, r in samples])
    print(f"N* = {n_star}, mu = {fit.params.mean():.4f}, sigma = {fit.params.std():.4f} -> {out}")


def cmd_fit_overlap(args) -> None:
    schedule = load_schedule(args.inp)
    model, report = DisturbanceModel.from_distributions(delays_from_flights(schedule.flights))
    out = _out_dir(args.out)
    _dump({"A": model.A, "B": model.B, "report": report}, out / "overlap.json")
    t = model.table
    _write_rows(out / "overlap.csv", ["sep", "expected", "conditional", "probability", "fitted"],
                zip(t["sep"].tolist(), t["expected"].tolist(), t["conditional"].tolist(),
                    t["probability"].tolist(), model(t["sep"]).tolist()))
    print(f"A = {model.A:.4f}, B = {model.B:.5f} -> {out}")


def cmd_assign(args) -> None:
    cfg = _read_config(args.config)
    if not args.gates:
        raise CliError("assign needs --gates")
    schedule = load_schedule(args.inp, args.gates)
    A, B = cfg.get("A", 8.0), cfg.get("B", 0.97)
    budget = args.budget if args.budget is not None else cfg.get("budget", 1000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    t_buff = cfg.get("t_buff", 0.0)
    inst = ProblemInstance.from_schedule(schedule, t_buff=t_buff, A=A, B=B)
    if args.assignment:
        initial = Assignment(load_assignment(args.assignment))
        bad = check_feasible(inst, initial)
        if bad:
            raise CliError(f"initial assignment infeasible: {bad[0]}")
        result = tabu_search(inst, initial, budget=budget, seed=seed, tenure=cfg.get("tenure", 20))
        source = "file"
    else:
        _, initial, source, result = robust_assignment(schedule, DisturbanceModel(A, B), budget, seed, t_buff)
    out = _out_dir(args.out)
    write_assignment(result.best.mapping, out / "assignment.csv")
    current = schedule.current_assignment()
    _dump({
        "config": {"A": A, "B": B, "t_buff": t_buff, "budget": budget, "seed": seed,
                   "tenure": cfg.get("tenure", 20)},
        "initial_source": source,
        "initial_objective": result.trace[0],
        "objective": result.trace[-1],
        "iterations": result.iterations,
        "moves": result.moves,
        "trace": result.trace,
        "separation": separation_summary(inst, result.best),
        "current_separation": (separation_summary(inst, Assignment(current))
                               if len(current) == len(inst) and not check_feasible(inst, Assignment(current))
                               else None),
    }, out / "assign.json")
    print(f"objective {result.trace[0]:.3f} -> {result.trace[-1]:.3f} -> {out}")


def _sim_config(args, cfg: dict) -> SimConfig:
    fits, default = _taxi_from(cfg)
    n_star = args.n_star if args.n_star is not None else cfg.get("n_star")
    return SimConfig(
        takeoff_params=_params_from(cfg), taxi_fits=fits, default_taxi=default, n_star=n_star,
        replications=args.replications if args.replications is not None else cfg.get("replications", 15),
        seed=args.seed if args.seed is not None else cfg.get("seed", 0),
        t_buff=cfg.get("t_buff", 0.0),
    )


def cmd_simulate(args) -> None:
    cfg = _read_config(args.config)
    schedule = load_schedule(args.inp, args.gates)
    mapping = load_assignment(args.assignment) if args.assignment else schedule.current_assignment()
    config = _sim_config(args, cfg)
    rep = run_replicated(schedule, mapping, config)
    out = _out_dir(args.out)
    _dump({"n_star": config.n_star, "replications": config.replications, "seed": config.seed,
           "metrics": rep.mean, "held_fraction": rep.held_fraction,
           "per_replication": [o.metrics() for o in rep.outcomes]}, out / "metrics.json")
    first = run_once(schedule, mapping, config, 0)
    _write_rows(out / "flights.csv",
                ["flight_id", "gate", "terminal", "ready_min", "pushback_min", "takeoff_min", "hold_min",
                 "taxi_out_min", "taxi_nominal", "npb", "promoted"],
                [(r.flight_id, r.gate, r.terminal, r.ready_min, r.pushback_min, r.takeoff_min, r.hold, r.taxi_out,
                  r.taxi_nominal, r.npb, int(r.promoted)) for r in sorted(first.records, key=lambda r: r.flight_id)])
    _write_rows(out / "conflicts.csv", ["arrival", "gate", "blocker", "request_min", "release_min", "overlap_min"],
                [(c.arrival, c.gate, c.blocker, c.request_min, c.release_min, c.overlap) for c in first.conflicts])
    # every replication as one day of push-back/take-off events, for calibrate
    _write_rows(out / "events.csv", ["day", "flight_id", "pushback_min", "takeoff_min", "terminal"],
                [(k, r.flight_id, r.pushback_min, r.takeoff_min, r.terminal)
                 for k, o in enumerate(rep.outcomes) for r in o.records])
    sweep = cfg.get("sweep")
    if sweep:
        result = sweep_n_star(schedule, mapping, config, range(int(sweep[0]), int(sweep[1]) + 1))
        _write_rows(out / "sweep.csv",
                    ["n_star", "mean_hold_all_min", "mean_taxi_out_min", "hold_plus_taxi_min", "gate_conflicts",
                     "gate_held_departures"],
                    [("none" if r.n_star is None else r.n_star, r.mean_hold_all_min, r.mean_taxi_out_min, r.total,
                      r.gate_conflicts, r.gate_held_departures) for r in [result.baseline] + list(result.rows)])
    m = rep.mean
    print(f"conflicts {m['gate_conflicts']:.2f}, held {m['gate_held_departures']:.1f}, "
          f"taxi {m['mean_taxi_out_min']:.2f} min -> {out}")


def cmd_report(args) -> None:
    columns = [("gate_conflicts", "conflicts", "{:.2f}"), ("gate_held_departures", "held", "{:.1f}"),
               ("mean_hold_min", "mean hold", "{:.2f}"), ("mean_hold_all_min", "hold/dep", "{:.2f}"),
               ("mean_taxi_out_min", "mean taxi", "{:.2f}")]
    lines = ["| run | N* | " + " | ".join(c[1] for c in columns) + " |",
             "|---|---|" + "---|" * len(columns)]
    for path in args.inputs:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read {path}: {exc}") from None
        if "metrics" not in data:
            raise CliError(f"{path} is not a simulate metrics file")
        label = Path(path).parent.name or Path(path).stem
        n_star = "off" if data.get("n_star") is None else data["n_star"]
        vals = " | ".join(fmt.format(data["metrics"][k]) for k, _, fmt in columns)
        lines.append(f"| {label} | {n_star} | {vals} |")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_study(args) -> None:
    profile = get_profile(args.profile)
    if args.replications is not None:
        profile.replications = args.replications
    if args.budget is not None:
        profile.tabu_budget = args.budget
    if args.n_star is not None:
        profile.n_star_default = args.n_star
    report = run_study(profile, args.seed if args.seed is not None else 0, args.out)
    sys.stdout.write(report.to_markdown())


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatehold", description="Gate-holding departure simulation and robust gate assignment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-synthetic", help="generate a synthetic schedule, gates and current assignment")
    p.add_argument("--profile", choices=["lga", "hub", "tiny"], help="start from a profile's generator settings")
    p.add_argument("--config", help="JSON generator overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("calibrate", help="fit N*, take-off and taxi-out models from push-back/take-off events")
    p.add_argument("--in", dest="inp", required=True, help="events CSV: flight_id, pushback_min, takeoff_min, terminal")
    p.add_argument("--config", help="JSON: threshold, capacity_window, npb_threshold, min_samples, min_count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-overlap", help="fit the A*B**x overlap model from schedule delays")
    p.add_argument("--in", dest="inp", required=True, help="schedule CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_overlap)

    p = sub.add_parser("assign", help="robust gate assignment by tabu search")
    p.add_argument("--in", dest="inp", required=True, help="schedule CSV")
    p.add_argument("--gates", help="gates CSV")
    p.add_argument("--assignment", help="initial assignment CSV (default: greedy, else current)")
    p.add_argument("--config", help="JSON: A, B, t_buff, tenure, budget, seed")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("simulate", help="replicated departure simulation with optional gate holding")
    p.add_argument("--in", dest="inp", required=True, help="schedule CSV")
    p.add_argument("--gates", help="gates CSV")
    p.add_argument("--assignment", help="assignment CSV (default: current gates)")
    p.add_argument("--config", help="JSON: takeoff_params, taxi_fits, n_star, replications, seed, sweep")
    p.add_argument("--n-star", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="side-by-side table of simulate metrics files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="metrics.json files")
    p.add_argument("--out", help="markdown file (default: stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("study", help="end-to-end study for a shipped airport profile")
    p.add_argument("--profile", choices=["lga", "hub", "tiny"], default="lga")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-star", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"gatehold {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
