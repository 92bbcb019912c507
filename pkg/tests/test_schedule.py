import numpy as np
import pytest

from gatehold.schedule import (Flight, Gate, GeneratorConfig, Schedule, ScheduleError, gen_synthetic,
                               load_assignment, load_schedule, pair_flights, separation_stats, split_turns,
                               write_assignment, write_gates, write_schedule)


def turn(fid, arr, dep, gate="G1", eq="large"):
    return Flight(fid, "AA", "A", eq, arr, dep, arr, dep, gate)


def test_flight_validation():
    with pytest.raises(ScheduleError):
        Flight("X", "AA", "A", "large")
    with pytest.raises(ScheduleError):
        Flight("X", "AA", "A", "large", 100, 90)
    with pytest.raises(ScheduleError):
        Flight("X", "AA", "A", "jumbo", 100, 190)


def test_unpaired_windows():
    arr = Flight("a", "AA", "A", "small", sched_arr=100, act_arr=105)
    dep = Flight("d", "AA", "A", "small", sched_dep=200, act_dep=210)
    assert arr.window() == (100, 130)
    assert dep.window() == (170, 200)
    assert dep.actual_window() == (180, 210)


def test_duplicate_ids_rejected():
    with pytest.raises(ScheduleError, match="duplicate"):
        Schedule([turn("x", 0, 50), turn("x", 60, 90)])


def test_csv_round_trip(tmp_path):
    s = gen_synthetic(GeneratorConfig(terminals={"A": 4}, airlines={"AA": ["A"]}, n_turns=12), 2)
    write_schedule(s, tmp_path / "s.csv")
    write_gates(s.gates, tmp_path / "g.csv")
    back = load_schedule(tmp_path / "s.csv", tmp_path / "g.csv")
    assert back.flights == s.flights
    assert back.gates == s.gates
    write_assignment(s.current_assignment(), tmp_path / "a.csv")
    assert load_assignment(tmp_path / "a.csv") == s.current_assignment()


def test_iso_times(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("flight_id,airline,terminal,equipment_class,sched_arr,sched_dep,act_arr,act_dep,current_gate\n"
                 "F1,AA,A,small,1970-01-01T01:00:00,1970-01-01T02:00:00,60,120,G1\n")
    f = load_schedule(p).flights[0]
    assert (f.sched_arr, f.sched_dep) == (60, 120)


def test_bad_row_reports_row_number(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("flight_id,airline,terminal,equipment_class,sched_arr,sched_dep,act_arr,act_dep,current_gate\n"
                 "F1,AA,A,small,10,20,10,20,G1\n"
                 "F2,AA,A,small,oops,20,10,20,G1\n")
    with pytest.raises(ScheduleError, match="row 2"):
        load_schedule(p)


def test_split_and_pair_round_trip():
    s = gen_synthetic(GeneratorConfig(), 4)
    arr, dep = split_turns(s.flights)
    paired = pair_flights(arr, dep)
    key = lambda f: f.id
    assert sorted(paired, key=key) == sorted(s.flights, key=key)


def test_towing_pattern_pairs_inner_legs():
    legs = [
        Flight("a1", "AA", "A", "large", sched_arr=100, current_gate="G"),
        Flight("a2", "AA", "A", "large", sched_arr=150, current_gate="G"),
        Flight("d2", "AA", "A", "large", sched_dep=200, current_gate="G"),
        Flight("d1", "AA", "A", "large", sched_dep=300, current_gate="G"),
    ]
    out = pair_flights([legs[0], legs[1]], [legs[2], legs[3]])
    ids = sorted(f.id for f in out)
    assert ids == ["a1", "a2+d2", "d1"]


def test_equipment_mismatch_not_paired():
    a = Flight("a", "AA", "A", "small", sched_arr=100, current_gate="G")
    d = Flight("d", "AA", "A", "large", sched_dep=200, current_gate="G")
    assert len(pair_flights([a], [d])) == 2


def test_generator_deterministic_and_calibrated():
    a = gen_synthetic(GeneratorConfig(), 11)
    b = gen_synthetic(GeneratorConfig(), 11)
    assert a.flights == b.flights
    stats = separation_stats(a, a.current_assignment())
    assert abs(stats["mean"] - 94) <= 10
    gates = a.gate_map()
    for f in a.flights:
        assert gates[f.current_gate].accepts(f)


def test_generator_current_assignment_has_no_scheduled_overlap():
    s = gen_synthetic(GeneratorConfig(), 12)
    by_gate = {}
    for f in s.flights:
        by_gate.setdefault(f.current_gate, []).append(f.window())
    for windows in by_gate.values():
        windows.sort()
        for (a0, a1), (b0, b1) in zip(windows, windows[1:]):
            assert b0 >= a1


def test_generator_single_turn():
    s = gen_synthetic(GeneratorConfig(terminals={"A": 1}, airlines={"AA": ["A"]}, n_turns=1, tow_prob=0.0), 0)
    assert len(s.flights) == 1


def test_generator_too_many_turns():
    with pytest.raises(ScheduleError):
        gen_synthetic(GeneratorConfig(terminals={"A": 1}, airlines={"AA": ["A"]}, n_turns=500), 0)


def test_unknown_generator_option():
    with pytest.raises(ScheduleError):
        GeneratorConfig.from_dict({"nonsense": 1})
