"""Robust gate assignment: objective, feasibility, neighborhood moves, tabu search.

The objective sums A * B**sep(i, k) over every unordered pair of flights that
share a gate, where sep(i, k) is the scheduled gap between the earlier
flight's gate-out and the later flight's gate-in. Two flights may share a
gate only when that gap is at least ``t_buff``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .schedule import UNPAIRED_DWELL, Flight, Gate, GateOccupancy, Schedule


class AssignmentError(ValueError):
    pass


class InfeasibleMove(AssignmentError):
    pass


@dataclass
class ProblemInstance:
    occupancies: list[GateOccupancy]
    gates: list[Gate]
    compatible: dict[str, frozenset]  # flight id -> compatible gate ids
    t_buff: float = 0.0
    A: float = 8.0
    B: float = 0.97

    def __post_init__(self):
        if self.t_buff < 0:
            raise AssignmentError("t_buff must be non-negative")
        self.occupancies = sorted(self.occupancies, key=lambda o: (o.t_in, o.t_out, o.flight))
        self.flight_ids = [o.flight for o in self.occupancies]
        if len(set(self.flight_ids)) != len(self.flight_ids):
            raise AssignmentError("duplicate flight in instance")
        self.gate_ids = sorted(g.id for g in self.gates)
        self.index = {f: i for i, f in enumerate(self.flight_ids)}
        self.gate_index = {g: j for j, g in enumerate(self.gate_ids)}
        self.t_in = np.array([o.t_in for o in self.occupancies], dtype=float)
        self.t_out = np.array([o.t_out for o in self.occupancies], dtype=float)
        for f in self.flight_ids:
            comp = self.compatible.get(f, frozenset())
            if not comp:
                raise AssignmentError(f"flight {f} has no compatible gate")
            unknown = set(comp) - set(self.gate_index)
            if unknown:
                raise AssignmentError(f"flight {f}: unknown gates {sorted(unknown)}")
        self.compat = np.zeros((len(self.flight_ids), len(self.gate_ids)), dtype=bool)
        for f, i in self.index.items():
            for g in self.compatible[f]:
                self.compat[i, self.gate_index[g]] = True
        self._tin = self.t_in.tolist()
        self._tout = self.t_out.tolist()
        self._compat_sets = [set(np.flatnonzero(row).tolist()) for row in self.compat]

    @classmethod
    def from_schedule(cls, schedule: Schedule, t_buff: float = 0.0, A: float = 8.0, B: float = 0.97,
                      dwell: int = UNPAIRED_DWELL) -> "ProblemInstance":
        """Gate windows come from scheduled times; compatibility from airline and equipment."""
        occ, compat = [], {}
        for f in schedule.flights:
            t_in, t_out = f.window(dwell)
            occ.append(GateOccupancy(f.id, None, t_in, t_out))
            compat[f.id] = frozenset(g.id for g in schedule.gates if g.accepts(f))
        return cls(occ, list(schedule.gates), compat, t_buff, A, B)

    def __len__(self):
        return len(self.flight_ids)

    def sep(self, i: int, k: int) -> float:
        """Scheduled separation between flights at indices i and k (negative if they overlap)."""
        return max(self.t_in[k] - self.t_out[i], self.t_in[i] - self.t_out[k])

    def pair_cost(self, i: int, k: int) -> float:
        return self.A * self.B ** self.sep(i, k)

    def compatible_pair(self, i: int, k: int) -> bool:
        return self.sep(i, k) >= self.t_buff


@dataclass
class Assignment:
    mapping: dict[str, str]
    objective_value: Optional[float] = None

    def copy(self) -> "Assignment":
        return Assignment(dict(self.mapping), self.objective_value)

    def gate_members(self, instance: ProblemInstance) -> dict[str, list[int]]:
        members: dict[str, list[int]] = {g: [] for g in instance.gate_ids}
        for f, g in self.mapping.items():
            if f in instance.index:
                members.setdefault(g, []).append(instance.index[f])
        for m in members.values():
            m.sort()
        return members


# --------------------------------------------------------------------------
# Objective and feasibility


def check_feasible(instance: ProblemInstance, assignment: Assignment) -> list[str]:
    """Return a list of violations; an empty list means feasible.

    Checks coverage of every flight, gate compatibility, and for each
    same-gate pair that (t_out_i - t_in_k + t_buff) * (t_out_k - t_in_i + t_buff) <= 0.
    """
    violations = []
    mapping = assignment.mapping
    for f in instance.flight_ids:
        g = mapping.get(f)
        if g is None:
            violations.append(f"flight {f} is not assigned")
        elif g not in instance.gate_index:
            violations.append(f"flight {f} assigned to unknown gate {g}")
        elif g not in instance.compatible[f]:
            violations.append(f"flight {f} is not compatible with gate {g}")
    extra = set(mapping) - set(instance.index)
    for f in sorted(extra):
        violations.append(f"unknown flight {f} in assignment")
    tb = instance.t_buff
    for g, members in assignment.gate_members(instance).items():
        for a in range(len(members)):
            i = members[a]
            for b in range(a + 1, len(members)):
                k = members[b]
                if instance.t_in[k] - tb >= instance.t_out[i]:
                    break  # members sorted by t_in, later ones are further away
                lhs = (instance.t_out[i] - instance.t_in[k] + tb) * (instance.t_out[k] - instance.t_in[i] + tb)
                if lhs > 0:
                    violations.append(
                        f"flights {instance.flight_ids[i]} and {instance.flight_ids[k]} overlap at gate {g}"
                    )
    return violations


def _gate_cost(instance: ProblemInstance, members: Sequence[int]) -> float:
    if len(members) < 2:
        return 0.0
    if len(members) <= 16:
        tin, tout, A, B = instance._tin, instance._tout, instance.A, instance.B
        total = 0.0
        for a, i in enumerate(members):
            for k in members[a + 1:]:
                total += A * B ** max(tin[k] - tout[i], tin[i] - tout[k])
        return total
    idx = np.asarray(members)
    t_in, t_out = instance.t_in[idx], instance.t_out[idx]
    sep = np.maximum(t_in[None, :] - t_out[:, None], t_in[:, None] - t_out[None, :])
    iu = np.triu_indices(len(idx), 1)
    return float((instance.A * np.power(instance.B, sep[iu])).sum())


def objective(instance: ProblemInstance, assignment: Assignment, check: bool = True) -> float:
    if check:
        bad = check_feasible(instance, assignment)
        if bad:
            raise AssignmentError(f"infeasible assignment: {bad[0]}" + (f" (+{len(bad) - 1} more)" if len(bad) > 1 else ""))
    total = 0.0
    for members in assignment.gate_members(instance).values():
        total += _gate_cost(instance, members)
    return total


def _attach(instance: ProblemInstance, i: int, members: Sequence[int]) -> tuple[float, bool]:
    """Cost of flight i joining a gate with ``members`` (i itself excluded) and whether it fits."""
    others = [k for k in members if k != i]
    if not others:
        return 0.0, True
    idx = np.asarray(others)
    sep = np.maximum(instance.t_in[idx] - instance.t_out[i], instance.t_in[i] - instance.t_out[idx])
    return float((instance.A * np.power(instance.B, sep)).sum()), bool(np.all(sep >= instance.t_buff))


# --------------------------------------------------------------------------
# Moves


def insert_move(instance: ProblemInstance, assignment: Assignment, flight: str,
                target_gate: str) -> tuple[Assignment, float]:
    """Move one flight to another gate; returns the candidate and the objective change.

    The change is the flight's pair terms at the target gate minus its pair
    terms at the current gate.
    """
    i = instance.index[flight]
    if target_gate not in instance.compatible[flight]:
        raise InfeasibleMove(f"gate {target_gate} is not compatible with flight {flight}")
    source = assignment.mapping[flight]
    if source == target_gate:
        return assignment.copy(), 0.0
    members = assignment.gate_members(instance)
    removed, _ = _attach(instance, i, members.get(source, []))
    added, fits = _attach(instance, i, members.get(target_gate, []))
    if not fits:
        raise InfeasibleMove(f"flight {flight} overlaps another flight at gate {target_gate}")
    cand = assignment.copy()
    cand.mapping[flight] = target_gate
    delta = added - removed
    if assignment.objective_value is not None:
        cand.objective_value = assignment.objective_value + delta
    return cand, delta


def _window_group(instance: ProblemInstance, members: Sequence[int], window) -> list[int]:
    lo, hi = window
    tin, tout = instance._tin, instance._tout
    return [k for k in members if tin[k] <= hi and tout[k] >= lo]


def _exchange_delta(instance, members_a, members_b, group_a, group_b, gate_a, gate_b):
    ga, gb = set(group_a), set(group_b)
    for k in group_a:
        if gate_b not in instance.compatible[instance.flight_ids[k]]:
            raise InfeasibleMove(f"flight {instance.flight_ids[k]} is not compatible with gate {gate_b}")
    for k in group_b:
        if gate_a not in instance.compatible[instance.flight_ids[k]]:
            raise InfeasibleMove(f"flight {instance.flight_ids[k]} is not compatible with gate {gate_a}")
    new_a = sorted([k for k in members_a if k not in ga] + list(group_b))
    new_b = sorted([k for k in members_b if k not in gb] + list(group_a))
    for new, gate in ((new_a, gate_a), (new_b, gate_b)):
        if not _gate_is_feasible(instance, new):
            raise InfeasibleMove(f"exchange creates an overlap at gate {gate}")
    before = _gate_cost(instance, members_a) + _gate_cost(instance, members_b)
    after = _gate_cost(instance, new_a) + _gate_cost(instance, new_b)
    return after - before


def _gate_is_feasible(instance: ProblemInstance, members: Sequence[int]) -> bool:
    # members sorted by t_in; a running max of t_out catches nested windows too
    latest = -math.inf
    tin, tout, tb = instance._tin, instance._tout, instance.t_buff
    for k in members:
        if tin[k] - latest < tb:
            return False
        if tout[k] > latest:
            latest = tout[k]
    return True


def interval_exchange_move(instance: ProblemInstance, assignment: Assignment, gate_a: str, gate_b: str,
                           window: tuple[float, float]) -> tuple[Assignment, float]:
    """Swap the flights of two gates whose occupancy intersects ``window``."""
    if gate_a == gate_b:
        raise InfeasibleMove("exchange needs two distinct gates")
    members = assignment.gate_members(instance)
    ma, mb = members.get(gate_a, []), members.get(gate_b, [])
    group_a = _window_group(instance, ma, window)
    group_b = _window_group(instance, mb, window)
    cand = assignment.copy()
    if not group_a and not group_b:
        return cand, 0.0
    delta = _exchange_delta(instance, ma, mb, group_a, group_b, gate_a, gate_b)
    for k in group_a:
        cand.mapping[instance.flight_ids[k]] = gate_b
    for k in group_b:
        cand.mapping[instance.flight_ids[k]] = gate_a
    if assignment.objective_value is not None:
        cand.objective_value = assignment.objective_value + delta
    return cand, delta


# --------------------------------------------------------------------------
# Construction and exact search


def greedy_initial(instance: ProblemInstance, sep_cap: float = 240.0) -> Assignment:
    """Place flights in gate-in order on the compatible gate with the largest separation.

    Separations are capped at ``sep_cap`` (empty gates count as the cap), so
    among gates that are all far enough apart the one accepting the fewest
    equipment classes wins, then the smallest gate id. This keeps small
    aircraft off large-capable gates when it costs nothing.
    """
    latest = {g: -math.inf for g in instance.gate_ids}
    breadth = {g.id: len(g.equipment) for g in instance.gates}
    mapping = {}
    for i, f in enumerate(instance.flight_ids):
        best, best_key = None, None
        for g in instance.compatible[f]:
            sep = instance.t_in[i] - latest[g]
            if sep < instance.t_buff:
                continue
            key = (-min(sep, sep_cap), breadth[g], g)
            if best_key is None or key < best_key:
                best, best_key = g, key
        if best is None:
            raise AssignmentError(f"greedy construction found no feasible gate for flight {f}")
        mapping[f] = best
        latest[best] = max(latest[best], instance.t_out[i])
    a = Assignment(mapping)
    a.objective_value = objective(instance, a, check=False)
    return a


def brute_force(instance: ProblemInstance, limit: int = 10**7) -> Assignment:
    """Exact optimum by depth-first enumeration with feasibility pruning."""
    n = len(instance)
    options = [sorted(instance.compatible[f], key=instance.gate_index.get) for f in instance.flight_ids]
    size = 1
    for o in options:
        size *= len(o)
        if size > limit:
            raise AssignmentError(f"instance too large for enumeration (> {limit} assignments)")
    best_cost = math.inf
    best_choice: Optional[list[str]] = None
    choice: list[Optional[str]] = [None] * n
    on_gate: dict[str, list[int]] = {g: [] for g in instance.gate_ids}

    def rec(i: int, cost: float):
        nonlocal best_cost, best_choice
        if cost >= best_cost - 1e-12 and best_choice is not None:
            return
        if i == n:
            best_cost, best_choice = cost, list(choice)
            return
        for g in options[i]:
            add, fits = _attach(instance, i, on_gate[g])
            if not fits:
                continue
            choice[i] = g
            on_gate[g].append(i)
            rec(i + 1, cost + add)
            on_gate[g].pop()
        choice[i] = None

    rec(0, 0.0)
    if best_choice is None:
        raise AssignmentError("no feasible assignment exists")
    a = Assignment(dict(zip(instance.flight_ids, best_choice)))
    a.objective_value = objective(instance, a, check=False)
    return a


# --------------------------------------------------------------------------
# Tabu search


@dataclass
class TabuResult:
    best: Assignment
    trace: list[float]  # best-so-far objective after each iteration (index 0 = initial)
    iterations: int
    moves: dict = field(default_factory=dict)


class _SearchState:
    """Gate contents plus cached insertion costs for every (flight, gate)."""

    def __init__(self, instance: ProblemInstance, mapping: Mapping[str, str]):
        self.inst = instance
        n, m = len(instance), len(instance.gate_ids)
        self.gate_of = np.array([instance.gate_index[mapping[f]] for f in instance.flight_ids], dtype=int)
        self.members: list[list[int]] = [[] for _ in range(m)]
        for i, j in enumerate(self.gate_of):
            self.members[j].append(i)
        self.attach = np.zeros((n, m))
        self.fits = np.zeros((n, m), dtype=bool)
        self.cost = [0.0] * m
        for j in range(m):
            self._refresh(j)
        self.value = sum(self.cost)

    def _refresh(self, j: int):
        inst = self.inst
        mem = self.members[j]
        self.cost[j] = _gate_cost(inst, mem)
        if not mem:
            self.attach[:, j] = 0.0
            self.fits[:, j] = inst.compat[:, j]
            return
        idx = np.asarray(mem)
        sep = np.maximum(inst.t_in[idx][None, :] - inst.t_out[:, None],
                         inst.t_in[:, None] - inst.t_out[idx][None, :])
        own = idx[None, :] == np.arange(len(inst))[:, None]
        cost = np.where(own, 0.0, inst.A * np.power(inst.B, sep))
        ok = own | (sep >= inst.t_buff)
        self.attach[:, j] = cost.sum(axis=1)
        self.fits[:, j] = ok.all(axis=1) & inst.compat[:, j]

    def move(self, i: int, j: int):
        src = self.gate_of[i]
        self.members[src].remove(i)
        bisect.insort(self.members[j], i)
        self.gate_of[i] = j
        self._refresh(src)
        self._refresh(j)

    def exchange(self, group_a, group_b, ja, jb):
        ga, gb = set(group_a), set(group_b)
        self.members[ja] = sorted([k for k in self.members[ja] if k not in ga] + list(group_b))
        self.members[jb] = sorted([k for k in self.members[jb] if k not in gb] + list(group_a))
        for k in group_a:
            self.gate_of[k] = jb
        for k in group_b:
            self.gate_of[k] = ja
        self._refresh(ja)
        self._refresh(jb)

    def mapping(self) -> dict[str, str]:
        ids, gates = self.inst.flight_ids, self.inst.gate_ids
        return {ids[i]: gates[j] for i, j in enumerate(self.gate_of)}


def tabu_search(instance: ProblemInstance, initial: Optional[Assignment] = None, budget: int = 1000,
                seed: int = 0, tenure: int = 20, n_exchange: int = 50, max_no_improve: int = 500,
                record_check: bool = False) -> TabuResult:
    """Minimize the pairwise overlap objective with Insert and Interval Exchange moves.

    Each iteration scores the full insert neighborhood and ``n_exchange``
    random interval exchanges, then applies the best admissible move even
    when it worsens the objective. Moving a flight back to a gate it just
    left is tabu for ``tenure`` iterations unless it beats the best
    solution found. If every candidate is tabu, the least-bad one is taken.
    Stops after ``budget`` iterations or ``max_no_improve`` iterations
    without improvement.
    """
    if initial is None:
        initial = greedy_initial(instance)
    bad = check_feasible(instance, initial)
    if bad:
        raise AssignmentError(f"initial assignment infeasible: {bad[0]}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7AB0]))
    state = _SearchState(instance, initial.mapping)
    n, m = len(instance), len(instance.gate_ids)
    best_value = state.value
    best_map = state.mapping()
    trace = [best_value]
    counts = {"insert": 0, "exchange": 0}
    if n == 0 or m < 2 or budget <= 0:
        res = Assignment(dict(initial.mapping), best_value)
        return TabuResult(res, trace, 0, counts)

    tabu_until = np.zeros((n, m), dtype=np.int64)
    flight_rank = np.argsort(np.argsort(np.array(instance.flight_ids, dtype=object)))
    lo_t, hi_t = float(instance.t_in.min()), float(instance.t_out.max())
    eps = 1e-9
    since_improve = 0
    it = 0
    rows = np.arange(n)
    for it in range(1, budget + 1):
        current = state.attach[rows, state.gate_of]
        delta = state.attach - current[:, None]
        valid = state.fits.copy()
        valid[rows, state.gate_of] = False
        is_tabu = tabu_until > it
        aspire = state.value + delta < best_value - eps
        admissible = valid & (~is_tabu | aspire)

        cand_delta, cand = math.inf, None
        pool = admissible if admissible.any() else valid
        if pool.any():
            d = np.where(pool, delta, np.inf)
            dmin = d.min()
            ties = np.argwhere(d <= dmin + 1e-12)
            # ties broken by (flight id, gate id); gate ids are sorted so index order matches
            order = sorted(ties.tolist(), key=lambda ij: (flight_rank[ij[0]], ij[1]))
            i, j = order[0]
            cand_delta, cand = float(dmin), ("insert", int(i), int(j))

        fallback = not admissible.any()
        compat_sets = instance._compat_sets
        for _ in range(n_exchange):
            ja, jb = (int(x) for x in rng.choice(m, size=2, replace=False))
            centre = rng.uniform(lo_t, hi_t)
            half = rng.uniform(15, 120)
            window = (centre - half, centre + half)
            ga = _window_group(instance, state.members[ja], window)
            gb = _window_group(instance, state.members[jb], window)
            if not ga and not gb:
                continue
            if not (all(jb in compat_sets[k] for k in ga) and all(ja in compat_sets[k] for k in gb)):
                continue
            sa, sb = set(ga), set(gb)
            new_a = sorted([k for k in state.members[ja] if k not in sa] + gb)
            new_b = sorted([k for k in state.members[jb] if k not in sb] + ga)
            if not (_gate_is_feasible(instance, new_a) and _gate_is_feasible(instance, new_b)):
                continue
            d = _gate_cost(instance, new_a) + _gate_cost(instance, new_b) - state.cost[ja] - state.cost[jb]
            tabu = any(tabu_until[k, jb] > it for k in ga) or any(tabu_until[k, ja] > it for k in gb)
            if tabu and not (state.value + d < best_value - eps) and not fallback:
                continue
            if d < cand_delta - 1e-12:
                cand_delta, cand = d, ("exchange", ga, gb, ja, jb)

        if cand is None:
            # nothing applicable this round; exchanges are resampled next time
            since_improve += 1
            trace.append(best_value)
            if since_improve >= max_no_improve:
                break
            continue
        if cand[0] == "insert":
            _, i, j = cand
            src = state.gate_of[i]
            state.move(i, j)
            tabu_until[i, src] = it + tenure
            counts["insert"] += 1
        else:
            _, ga, gb, ja, jb = cand
            state.exchange(ga, gb, ja, jb)
            for k in ga:
                tabu_until[k, ja] = it + tenure
            for k in gb:
                tabu_until[k, jb] = it + tenure
            counts["exchange"] += 1
        state.value += cand_delta

        if state.value < best_value - eps:
            best_value = state.value
            best_map = state.mapping()
            since_improve = 0
            if record_check:
                viol = check_feasible(instance, Assignment(best_map))
                if viol:
                    raise AssertionError(f"tabu search recorded an infeasible best: {viol[0]}")
        else:
            since_improve += 1
        trace.append(best_value)
        if since_improve >= max_no_improve:
            break

    best = Assignment(best_map)
    best.objective_value = objective(instance, best, check=False)
    return TabuResult(best, trace, it, counts)


def separation_summary(instance: ProblemInstance, assignment: Assignment) -> dict:
    """Mean/std of consecutive same-gate separations, the statistic behind gate-separation tables."""
    seps = []
    for members in assignment.gate_members(instance).values():
        for a, b in zip(members, members[1:]):
            seps.append(instance.t_in[b] - instance.t_out[a])
    if not seps:
        return {"mean": 0.0, "std": 0.0, "count": 0}
    arr = np.asarray(seps)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "count": len(seps)}
