"""Offloading with a CAP: SDR-C start, alternating optimisation, sequential tuning.

Every improvement step re-solves the allocation for the candidate decision,
so costs are always worst-case costs under the optimal allocation.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import qcqp, sdp
from .alloc import CostTable, aggregate, allocate, allocate_batch, batch_cost
from .costs import CostBreakdown, total_cost
from .model import Allocation, BoundKind, Decision, Instance, Mode, Placement

log = logging.getLogger(__name__)

ENUM_LIMIT = 4096  # exact per-user enumeration up to this many placements
ST_REL_TOL = 1e-9
AUDIT_REL_TOL = 1e-6
ST_CHUNK = 16  # moves evaluated per batch during a sequential-tuning pass


@dataclass(frozen=True)
class StepResult:
    decision: Decision
    allocation: Allocation
    cost: CostBreakdown
    iterations: int

    def __iter__(self):
        # unpacks as (decision, allocation, total cost)
        return iter((self.decision, self.allocation, self.cost.total))


@dataclass(frozen=True)
class MumtocResult:
    decision: Decision
    allocation: Allocation
    cost: CostBreakdown
    j_sdr: float
    j_ao: float
    j_st: float
    ao_iterations: int
    st_passes: int
    relaxed_objective: float
    solver_ok: bool = True  # False when the SDR failed and AO started from all-Local


def _options(instance: Instance) -> tuple[Placement, ...]:
    if instance.mode is Mode.NO_CAP:
        return (Placement.LOCAL, Placement.CLOUD)
    return (Placement.LOCAL, Placement.CAP, Placement.CLOUD)


def placement_probabilities(sol: sdp.SdpSolution, layouts) -> list[np.ndarray]:
    """(M_i, 3) arrays of (p^l, p^a, p^c) from the last row of each block."""
    out = []
    for i, L in enumerate(layouts):
        row = sol.last_row(i)
        out.append(np.array([[row[L.slot(j, w)] for w in Placement] for j in range(L.n_tasks)]))
    return out


def recover_decision_cap(sol: sdp.SdpSolution, layouts) -> Decision:
    """Per-task argmax of (p^l, p^a, p^c); ties go to Local, then Cap, then Cloud."""
    if any(L.mode is not Mode.WITH_CAP for L in layouts):
        raise ValueError("recover_decision_cap expects a CAP layout")
    probs = placement_probabilities(sol, layouts)
    # np.argmax returns the first maximum, which is exactly the tie order
    return Decision(tuple(tuple(Placement(int(k)) for k in np.argmax(P, axis=1)) for P in probs))


def _evaluate(table: CostTable, instance: Instance, X: np.ndarray):
    """Allocate every decision in X; returns (totals, BatchAllocation)."""
    res = allocate_batch(table, X)
    return res.total, res


def _finish(instance, table, X, iterations) -> StepResult:
    decision = _as_decision(X, instance.task_counts)
    alloc = allocate_batch(table, X[None]).allocation(0, instance.mode)
    return StepResult(decision, alloc, total_cost(instance, decision, alloc), iterations)


def _as_decision(row: np.ndarray, counts) -> Decision:
    return Decision(tuple(tuple(Placement(int(v)) for v in row[i, :m]) for i, m in enumerate(counts)))


def _user_lp(table: CostTable, i: int, c_u: float, c_d: float, f_a: float) -> np.ndarray:
    """Continuous relaxation of one user's placement problem, rounded by argmax."""
    m = int(table.valid[i].sum())
    rho = table.rho[i]
    # variables: x[j, w] for w in (L, A, C), then t
    nv = 3 * m + 1
    cost = np.zeros(nv)
    cost[0:3 * m:3] = table.e_local[i, :m]
    cost[1:3 * m:3] = table.e_cap[i, :m]
    cost[2:3 * m:3] = table.e_cloud[i, :m]
    cost[-1] = rho
    up = table.up_work[i, :m] / c_u if c_u > 0 else np.zeros(m)
    down = table.down_work[i, :m] / c_d if c_d > 0 else np.zeros(m)
    wire = up + down
    rows = []
    r = np.zeros(nv)
    r[0:3 * m:3] = table.t_local[i, :m]
    r[-1] = -1
    rows.append(r)
    r = np.zeros(nv)
    r[1:3 * m:3] = wire + (table.cycles[i, :m] / f_a if f_a > 0 else 0.0)
    r[2:3 * m:3] = wire
    r[-1] = -1
    rows.append(r)
    r = np.zeros(nv)
    r[1:3 * m:3] = wire
    r[2:3 * m:3] = wire + table.t_ac[i, :m] + table.t_cloud[i, :m]
    r[-1] = -1
    rows.append(r)
    A_eq = np.zeros((m, nv))
    for j in range(m):
        A_eq[j, 3 * j:3 * j + 3] = 1.0
    bounds = []
    for _ in range(m):
        bounds += [(0, 1), (0, 1 if (c_u > 0 and c_d > 0 and f_a > 0) else 0),
                   (0, 1 if (c_u > 0 and c_d > 0) else 0)]
    bounds.append((0, None))
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.zeros(3), A_eq=A_eq, b_eq=np.ones(m),
                  bounds=bounds, method="highs")
    if res.status != 0:
        return np.zeros(m, dtype=np.int8)
    return np.argmax(res.x[:-1].reshape(m, 3), axis=1).astype(np.int8)


def _decision_step(instance: Instance, table: CostTable, X: np.ndarray, res, k: int) -> np.ndarray:
    """Best placement for every user at the fixed allocation ``res[k]`` (subproblem per user)."""
    n, width = X.shape
    opts = np.array([int(p) for p in _options(instance)], dtype=np.int8)
    c_u, c_d, f_a = res.c_u[k], res.c_d[k], res.f_a[k]
    out = X.copy()
    for i, m in enumerate(instance.task_counts):
        if len(opts) ** m <= ENUM_LIMIT:
            rows = np.array(list(itertools.product(opts, repeat=m)), dtype=np.int8)
        else:
            rows = np.stack([X[i, :m], _user_lp(table, i, c_u[i], c_d[i], f_a[i])])
        cand = np.repeat(X[None], len(rows), axis=0)
        cand[:, i, :m] = rows
        agg = aggregate(table, cand)
        shape = (len(rows), n)
        e, d = batch_cost(table, agg, np.broadcast_to(c_u, shape), np.broadcast_to(c_d, shape),
                          np.broadcast_to(f_a, shape))
        val = e + d
        current = np.flatnonzero((rows == X[i, :m]).all(axis=1))
        best = int(np.argmin(val))
        if current.size and not val[best] < val[current[0]]:
            continue
        out[i, :m] = rows[best]
    return out


def step_ao(instance: Instance, start, table: CostTable | None = None) -> StepResult:
    """Alternate per-user placement at fixed resources and allocation at fixed placement."""
    table = table or CostTable.of(instance)
    decision = start[0]
    width = table.shape[1]
    X = decision.as_array(width)
    total, res = _evaluate(table, instance, X[None])
    cur = float(total[0])
    iterations = 0
    while True:
        iterations += 1
        Y = _decision_step(instance, table, X, res, 0)
        if np.array_equal(Y, X):
            break
        new_total, new_res = _evaluate(table, instance, Y[None])
        if not new_total[0] < cur:
            break
        X, res, cur = Y, new_res, float(new_total[0])
    return _finish(instance, table, X, iterations)


def _moves(instance: Instance):
    opts = _options(instance)
    return [(i, j, w) for i, m in enumerate(instance.task_counts) for j in range(m) for w in opts]


def step_st(instance: Instance, start, seed: int = 0, table: CostTable | None = None) -> StepResult:
    """Randomised first-improvement search over single-task placement changes."""
    table = table or CostTable.of(instance)
    rng = np.random.default_rng(seed)
    X = start[0].as_array(table.shape[1])
    cur = float(_evaluate(table, instance, X[None])[0][0])
    opts = _options(instance)
    passes = 0
    while True:
        passes += 1
        order = []
        for i in rng.permutation(instance.n_users):
            for j in rng.permutation(instance.task_counts[i]):
                order += [(i, j, w) for w in opts if int(w) != X[i, j]]
        accepted = False
        for lo in range(0, len(order), ST_CHUNK):
            chunk = order[lo:lo + ST_CHUNK]
            cand = np.repeat(X[None], len(chunk), axis=0)
            for k, (i, j, w) in enumerate(chunk):
                cand[k, i, j] = int(w)
            totals, _ = _evaluate(table, instance, cand)
            better = np.flatnonzero(totals < cur * (1 - ST_REL_TOL))
            if better.size:
                k = int(better[0])
                X, cur = cand[k], float(totals[k])
                accepted = True
                break
        if not accepted:
            break
    return _finish(instance, table, X, passes)


def single_move_audit(instance: Instance, decision: Decision, rel_tol: float = AUDIT_REL_TOL,
                      table: CostTable | None = None) -> list[tuple[int, int, Placement, float]]:
    """Single-task moves that lower the cost by more than ``rel_tol`` (empty if locally optimal)."""
    table = table or CostTable.of(instance)
    X = decision.as_array(table.shape[1])
    cur = float(_evaluate(table, instance, X[None])[0][0])
    moves = [(i, j, w) for i, j, w in _moves(instance) if int(w) != X[i, j]]
    cand = np.repeat(X[None], len(moves), axis=0)
    for k, (i, j, w) in enumerate(moves):
        cand[k, i, j] = int(w)
    totals, _ = _evaluate(table, instance, cand)
    return [(i, j, w, float(t)) for (i, j, w), t in zip(moves, totals) if t < cur * (1 - rel_tol)]


def _require_cap(instance: Instance) -> None:
    if instance.mode is not Mode.WITH_CAP:
        raise ValueError("this algorithm needs a CAP instance")


def run(instance: Instance, seed: int = 0, tol: float = 1e-6) -> MumtocResult:
    _require_cap(instance)
    table = CostTable.of(instance)
    problem = qcqp.build(instance, BoundKind.UPPER)
    sol = sdp.solve(problem, tol)
    if sol.ok:
        decision = recover_decision_cap(sol, problem.layouts)
        relaxed = sol.value
    else:
        log.warning("SDR-C solve ended with status %s; starting from all-Local", sol.status.value)
        decision = Decision.all_local(instance)
        relaxed = float("nan")
    alloc, cost = allocate(instance, decision, table)
    j_sdr = cost.total
    ao = step_ao(instance, (decision, alloc), table)
    st = step_st(instance, (ao.decision, ao.allocation), seed, table)
    return MumtocResult(st.decision, st.allocation, st.cost, j_sdr, ao.cost.total, st.cost.total,
                        ao.iterations, st.iterations, relaxed, sol.ok)


def lower_bound_cap(instance: Instance, tol: float = 1e-6) -> float:
    """Relaxed optimum of the best-case-delay CAP problem."""
    _require_cap(instance)
    sol = sdp.solve(qcqp.build(instance, BoundKind.LOWER), tol, refine=True)
    if not sol.ok:
        raise sdp.SolverFailure(f"lower-bound SDP ended with status {sol.status.value}")
    return sol.bound
