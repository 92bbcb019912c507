import numpy as np
import pytest

from gatehold.assignment import (Assignment, AssignmentError, InfeasibleMove, ProblemInstance, brute_force,
                                 check_feasible, greedy_initial, insert_move, interval_exchange_move, objective,
                                 separation_summary, tabu_search)
from gatehold.schedule import Gate, GateOccupancy, GeneratorConfig, gen_synthetic

from helpers import random_instance


def _gates(*ids):
    return [Gate(g, "T", frozenset({"X"}), frozenset({"small", "large"})) for g in ids]


def _instance(windows, gates=("G1", "G2"), t_buff=0.0):
    occ = [GateOccupancy(f, None, a, b) for f, (a, b) in windows.items()]
    compat = {f: frozenset(gates) for f in windows}
    return ProblemInstance(occ, _gates(*gates), compat, t_buff)


def test_objective_by_hand():
    inst = _instance({"f1": (0, 50), "f2": (60, 100), "f3": (130, 200)})
    a = Assignment({"f1": "G1", "f2": "G1", "f3": "G1"})
    expected = 8 * (0.97**10 + 0.97**80 + 0.97**30)
    assert objective(inst, a) == pytest.approx(expected, rel=1e-12)
    assert objective(inst, Assignment({"f1": "G1", "f2": "G2", "f3": "G1"})) == pytest.approx(8 * 0.97**80)


def test_feasibility_checks():
    inst = _instance({"f1": (0, 50), "f2": (40, 100)}, t_buff=0)
    assert check_feasible(inst, Assignment({"f1": "G1", "f2": "G1"}))
    assert check_feasible(inst, Assignment({"f1": "G1"}))
    assert not check_feasible(inst, Assignment({"f1": "G1", "f2": "G2"}))
    with pytest.raises(AssignmentError):
        objective(inst, Assignment({"f1": "G1", "f2": "G1"}))


def test_buffer_enforced():
    inst = _instance({"f1": (0, 50), "f2": (55, 100)}, t_buff=10)
    assert check_feasible(inst, Assignment({"f1": "G1", "f2": "G1"}))
    inst = _instance({"f1": (0, 50), "f2": (60, 100)}, t_buff=10)
    assert not check_feasible(inst, Assignment({"f1": "G1", "f2": "G1"}))


def test_incompatible_gate_reported():
    occ = [GateOccupancy("f1", None, 0, 10)]
    inst = ProblemInstance(occ, _gates("G1", "G2"), {"f1": frozenset({"G1"})})
    assert check_feasible(inst, Assignment({"f1": "G2"}))
    with pytest.raises(InfeasibleMove):
        insert_move(inst, Assignment({"f1": "G1"}), "f1", "G2")


def test_flight_without_gate_rejected():
    with pytest.raises(AssignmentError):
        ProblemInstance([GateOccupancy("f1", None, 0, 10)], _gates("G1"), {"f1": frozenset()})


def test_insert_delta_matches_recompute():
    rng = np.random.default_rng(0)
    for _ in range(30):
        inst, home = random_instance(rng)
        a = Assignment(dict(home))
        f = inst.flight_ids[int(rng.integers(len(inst)))]
        g = sorted(inst.compatible[f])[int(rng.integers(len(inst.compatible[f])))]
        try:
            cand, delta = insert_move(inst, a, f, g)
        except InfeasibleMove:
            continue
        assert objective(inst, cand) - objective(inst, a) == pytest.approx(delta, abs=1e-9)


def test_exchange_delta_matches_recompute():
    rng = np.random.default_rng(1)
    seen = 0
    for _ in range(200):
        inst, home = random_instance(rng)
        a = Assignment(dict(home))
        lo = float(rng.integers(0, 300))
        try:
            cand, delta = interval_exchange_move(inst, a, "G0", "G1", (lo, lo + 80))
        except InfeasibleMove:
            continue
        seen += 1
        assert objective(inst, cand) - objective(inst, a) == pytest.approx(delta, abs=1e-9)
    assert seen > 20


def test_exchange_same_gate_rejected():
    inst, home = random_instance(np.random.default_rng(2))
    with pytest.raises(InfeasibleMove):
        interval_exchange_move(inst, Assignment(home), "G0", "G0", (0, 100))


def test_brute_force_beats_or_ties_everything():
    rng = np.random.default_rng(4)
    inst, home = random_instance(rng, n_flights=6)
    best = brute_force(inst)
    assert not check_feasible(inst, best)
    assert best.objective_value <= objective(inst, Assignment(home)) + 1e-12


def test_tabu_matches_brute_force_on_small_instances():
    rng = np.random.default_rng(5)
    for _ in range(15):
        inst, home = random_instance(rng, n_flights=int(rng.integers(2, 9)), n_gates=int(rng.integers(2, 4)))
        res = tabu_search(inst, Assignment(home), budget=200, seed=0, max_no_improve=100)
        assert res.best.objective_value == pytest.approx(brute_force(inst).objective_value, abs=1e-9)


def test_tabu_trace_and_determinism():
    inst, home = random_instance(np.random.default_rng(6), n_flights=20, n_gates=4)
    r1 = tabu_search(inst, Assignment(home), budget=100, seed=3)
    r2 = tabu_search(inst, Assignment(home), budget=100, seed=3)
    assert r1.trace == r2.trace and r1.best.mapping == r2.best.mapping
    assert all(b <= a + 1e-12 for a, b in zip(r1.trace, r1.trace[1:]))
    assert not check_feasible(inst, r1.best)


def test_tabu_rejects_infeasible_start():
    inst = _instance({"f1": (0, 50), "f2": (40, 100)})
    with pytest.raises(AssignmentError):
        tabu_search(inst, Assignment({"f1": "G1", "f2": "G1"}))


def test_greedy_is_feasible():
    inst, _ = random_instance(np.random.default_rng(7), n_flights=30, n_gates=5)
    assert not check_feasible(inst, greedy_initial(inst))


def test_robust_spreads_separations_on_generated_schedule():
    s = gen_synthetic(GeneratorConfig(terminals={"A": 6, "B": 6}, airlines={"AA": ["A"], "UA": ["B"]}), 3)
    inst = ProblemInstance.from_schedule(s)
    current = Assignment(s.current_assignment())
    res = tabu_search(inst, current, budget=200, seed=0)
    assert res.best.objective_value < objective(inst, current)
    assert separation_summary(inst, res.best)["mean"] >= separation_summary(inst, current)["mean"]
