"""Exhaustive search over decisions, and the fixed-decision comparison schemes."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from . import costs
from .alloc import CostTable, aggregate, allocate, allocate_batch, batch_cost
from .costs import CostBreakdown
from .model import Allocation, BoundKind, Decision, Instance, Mode, Placement

SPACE_GUARD = 2**20
CHUNK = 1024


class SpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    decision: Decision
    allocation: Allocation
    cost: CostBreakdown
    evaluated: int = 1
    cost_best_case: CostBreakdown | None = None

    @property
    def total(self) -> float:
        return self.cost.total


class Baseline(enum.Enum):
    LOCAL_ONLY = "local"
    CLOUD_ONLY = "cloud"
    RANDOM_MAPPING = "random"


def choices(instance: Instance) -> tuple[Placement, ...]:
    if instance.mode is Mode.NO_CAP:
        return (Placement.LOCAL, Placement.CLOUD)
    return (Placement.LOCAL, Placement.CAP, Placement.CLOUD)


def space_size(instance: Instance) -> int:
    return len(choices(instance)) ** instance.n_tasks


def _decisions(instance: Instance, width: int):
    """Yield (k, n, width) int8 arrays covering every decision once."""
    opts = np.array([int(p) for p in choices(instance)], dtype=np.int8)
    counts = instance.task_counts
    slots = [(i, j) for i, m in enumerate(counts) for j in range(m)]
    it = itertools.product(range(len(opts)), repeat=len(slots))
    while True:
        block = list(itertools.islice(it, CHUNK))
        if not block:
            return
        idx = np.array(block, dtype=np.int64).reshape(len(block), len(slots))
        X = np.full((len(block), len(counts), width), -1, dtype=np.int8)
        for s, (i, j) in enumerate(slots):
            X[:, i, j] = opts[idx[:, s]]
        yield X


def _from_array(row: np.ndarray, counts) -> Decision:
    return Decision(tuple(tuple(Placement(int(v)) for v in row[i, :m]) for i, m in enumerate(counts)))


def exhaustive(instance: Instance, bound_kind: BoundKind = BoundKind.UPPER) -> OracleResult:
    """Global optimum over all decisions; each allocation minimises the worst-case cost."""
    size = space_size(instance)
    if size > SPACE_GUARD:
        raise SpaceTooLarge(
            f"{size} decisions exceed the guard of {SPACE_GUARD}; reduce users or tasks "
            f"(at most {int(np.log(SPACE_GUARD) / np.log(len(choices(instance))))} tasks in total)")
    table = CostTable.of(instance)
    best_val, best_row = np.inf, None
    for X in _decisions(instance, table.shape[1]):
        res = allocate_batch(table, X)
        if bound_kind is BoundKind.UPPER:
            total = res.total
        else:
            e, d = batch_cost(table, aggregate(table, X), res.c_u, res.c_d, res.f_a, bound_kind)
            total = e + d
        k = int(np.argmin(total))
        if total[k] < best_val:
            best_val, best_row = float(total[k]), X[k].copy()
    decision = _from_array(best_row, instance.task_counts)
    alloc, _ = allocate(instance, decision, table)
    return OracleResult(decision, alloc, costs.total_cost(instance, decision, alloc, bound_kind), size)


def random_decision(instance: Instance, seed: int) -> Decision:
    """Every task placed at one of the available locations with equal probability."""
    opts = choices(instance)
    rng = np.random.default_rng(seed)
    return Decision(tuple(
        tuple(opts[k] for k in rng.integers(0, len(opts), size=m)) for m in instance.task_counts
    ))


def baseline(instance: Instance, kind: Baseline | str, seed: int = 0) -> OracleResult:
    kind = Baseline(kind)
    if kind is Baseline.LOCAL_ONLY:
        decision = Decision.all_local(instance)
    elif kind is Baseline.CLOUD_ONLY:
        decision = Decision.all_cloud(instance)
    else:
        decision = random_decision(instance, seed)
    alloc, cost = allocate(instance, decision)
    best = None
    if kind is Baseline.CLOUD_ONLY:
        best = costs.total_cost(instance, decision, alloc, BoundKind.LOWER)
    return OracleResult(decision, alloc, cost, 1, best)
