"""Offloading without a CAP: SDR, rounding, allocation and baseline comparison."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import qcqp, sdp
from .alloc import CostTable, allocate
from .costs import CostBreakdown
from .model import Allocation, BoundKind, Decision, Instance, Mode, Placement

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MumtoResult:
    decision: Decision
    allocation: Allocation
    cost: CostBreakdown
    relaxed_objective: float  # SDP value including the offset; nan if the solve failed
    fractional_p: tuple[tuple[float, ...], ...]
    chosen: str = "sdr"  # which candidate won: "sdr", "local" or "cloud"
    solver_ok: bool = True


def fractional_offload(sol: sdp.SdpSolution, layouts) -> tuple[tuple[float, ...], ...]:
    """p_ij read from the last row of every block, clipped to [0, 1]."""
    out = []
    for i, L in enumerate(layouts):
        row = sol.last_row(i)
        out.append(tuple(float(np.clip(row[L.slot(j)], 0.0, 1.0)) for j in range(L.n_tasks)))
    return tuple(out)


def recover_decision(sol: sdp.SdpSolution, layouts) -> Decision:
    """Round p_ij to the nearest placement; exactly 0.5 goes to the cloud."""
    rows = []
    for i, L in enumerate(layouts):
        if L.mode is not Mode.NO_CAP:
            raise ValueError("recover_decision expects a no-CAP layout")
        row = sol.last_row(i)
        rows.append(tuple(
            Placement.CLOUD if row[L.slot(j)] >= 0.5 else Placement.LOCAL for j in range(L.n_tasks)
        ))
    return Decision(tuple(rows))


def _require_nocap(instance: Instance) -> None:
    if instance.mode is not Mode.NO_CAP:
        raise ValueError("this algorithm needs a no-CAP instance")


def run(instance: Instance, tol: float = 1e-6) -> MumtoResult:
    """SDR decision versus all-Local and all-Cloud, each with its optimal allocation."""
    _require_nocap(instance)
    table = CostTable.of(instance)
    problem = qcqp.build(instance, BoundKind.UPPER)
    sol = sdp.solve(problem, tol)

    candidates = [
        ("local", Decision.all_local(instance)),
        ("cloud", Decision.all_cloud(instance)),
    ]
    if sol.ok:
        candidates.insert(0, ("sdr", recover_decision(sol, problem.layouts)))
        p = fractional_offload(sol, problem.layouts)
        relaxed = sol.value
    else:
        log.warning("SDR solve ended with status %s; comparing baselines only", sol.status.value)
        p = tuple((float("nan"),) * m for m in instance.task_counts)
        relaxed = float("nan")

    best = None
    for name, decision in candidates:
        alloc, cost = allocate(instance, decision, table)
        if best is None or cost.total < best[3].total:
            best = (name, decision, alloc, cost)
    name, decision, alloc, cost = best
    return MumtoResult(decision, alloc, cost, relaxed, p, name, sol.ok)


def lower_bound(instance: Instance, tol: float = 1e-6) -> float:
    """Relaxed optimum of the best-case-delay problem, a lower bound on any cost."""
    _require_nocap(instance)
    sol = sdp.solve(qcqp.build(instance, BoundKind.LOWER), tol, refine=True)
    if not sol.ok:
        raise sdp.SolverFailure(f"lower-bound SDP ended with status {sol.status.value}")
    return sol.bound
