import numpy as np

from gatehold.assignment import ProblemInstance
from gatehold.schedule import Gate, GateOccupancy


def random_instance(rng, n_flights=8, n_gates=3, A=8.0, B=0.97, t_buff=0.0, horizon=400):
    """Small random instance that always admits at least one feasible assignment."""
    gates = [Gate(f"G{j}", "T", frozenset({"X"}), frozenset({"small", "large"})) for j in range(n_gates)]
    occ, compat = [], {}
    # build on a hidden feasible assignment so the instance is never empty of solutions
    cursor = {g.id: 0 for g in gates}
    for i in range(n_flights):
        home = gates[int(rng.integers(n_gates))].id
        start = cursor[home] + int(rng.integers(int(t_buff), int(t_buff) + 60))
        dur = int(rng.integers(20, 80))
        cursor[home] = start + dur
        occ.append(GateOccupancy(f"F{i}", home, start, start + dur))
        others = [g.id for g in gates if g.id != home and rng.random() < 0.7]
        compat[f"F{i}"] = frozenset([home] + others)
    return ProblemInstance(occ, gates, compat, t_buff, A, B), {o.flight: o.gate for o in occ}
