from dataclasses import replace

import numpy as np
import pytest

from offload import mumtoc, qcqp, sdp
from offload.alloc import allocate
from offload.model import BoundKind, Decision, Mode, Placement
from offload.oracle import Baseline, baseline, exhaustive

from conftest import make


def _fake_cap_solution(prob_rows):
    blocks, layouts = [], []
    for P in prob_rows:
        L = qcqp.VariableLayout.for_user(Mode.WITH_CAP, len(P))
        Z = np.zeros((L.dim, L.dim))
        for j, p in enumerate(P):
            for w, v in zip(Placement, p):
                Z[-1, L.slot(j, w)] = v
        Z[-1, -1] = 1.0
        blocks.append(Z)
        layouts.append(L)
    return sdp.SdpSolution(tuple(blocks), 0.0, 0.0, sdp.SdpStatus.OPTIMAL, 0.0, 0.0, 0.0, 0), layouts


def test_argmax_recovery_and_ties():
    sol, layouts = _fake_cap_solution([[(0.2, 0.5, 0.3), (1, 0, 0), (0.4, 0.4, 0.2), (0, 0.5, 0.5)]])
    assert mumtoc.recover_decision_cap(sol, layouts).to_string() == "ALLA"


def test_steps_are_monotone_and_locally_optimal(friendly, defaults):
    for pd in (defaults, friendly):
        for seed in range(6):
            inst = make(pd, 3, 3, seed, Mode.WITH_CAP)
            r = mumtoc.run(inst, seed)
            assert r.j_st <= r.j_ao <= r.j_sdr
            assert r.cost.total == r.j_st
            assert mumtoc.single_move_audit(inst, r.decision) == []


def test_ao_fixed_point(friendly):
    inst = make(friendly, 3, 2, seed=1, mode=Mode.WITH_CAP)
    first = mumtoc.step_ao(inst, (Decision.all_cloud(inst), None))
    again = mumtoc.step_ao(inst, (first.decision, first.allocation))
    assert again.decision == first.decision
    assert again.iterations == 1
    assert again.cost.total == first.cost.total


def test_ao_accepts_only_improvements(friendly):
    for seed in range(5):
        inst = make(friendly, 3, 3, seed, Mode.WITH_CAP)
        start = Decision.all_cloud(inst)
        start_cost = allocate(inst, start)[1].total
        r = mumtoc.step_ao(inst, (start, None))
        assert r.cost.total <= start_cost


def test_ao_lp_fallback_for_many_tasks(friendly):
    """3^8 > 4096 placements: the per-user step switches to the LP relaxation."""
    inst = make(friendly, 2, 8, seed=3, mode=Mode.WITH_CAP)
    start = Decision.all_cloud(inst)
    start_cost = allocate(inst, start)[1].total
    r = mumtoc.step_ao(inst, (start, None))
    assert r.cost.total <= start_cost


def test_st_from_optimum_is_unchanged(friendly):
    for seed in range(5):
        inst = make(friendly, 2, 2, seed, Mode.WITH_CAP)
        best = exhaustive(inst)
        r = mumtoc.step_st(inst, (best.decision, best.allocation), seed)
        assert r.decision == best.decision
        assert r.iterations == 1


def test_st_result_unpacks_as_triple(friendly):
    inst = make(friendly, 2, 2, seed=0, mode=Mode.WITH_CAP)
    decision, alloc, total = mumtoc.step_st(inst, (Decision.all_local(inst), None), 0)
    assert isinstance(decision, Decision) and total == allocate(inst, decision)[1].total


def test_beats_baselines(friendly, defaults):
    for pd in (defaults, friendly):
        for seed in range(5):
            inst = make(pd, 3, 3, seed, Mode.WITH_CAP)
            r = mumtoc.run(inst, seed)
            for kind in Baseline:
                assert r.j_st <= baseline(inst, kind, seed).total * (1 + 1e-12)


def test_cheap_cap_attracts_tasks(defaults):
    params, device = defaults
    inst = make((replace(params, alpha=1e-9, beta=1e-4), device), 5, 4, seed=0, mode=Mode.WITH_CAP)
    r = mumtoc.run(inst, 0)
    offloaded = r.decision.count(Placement.CAP) + r.decision.count(Placement.CLOUD)
    assert offloaded > 0
    assert r.decision.count(Placement.CAP) >= 0.5 * offloaded


def test_expensive_cap_embeds_nocap(defaults):
    params, device = defaults
    inst = make((replace(params, alpha=1.0), device), 3, 3, seed=4, mode=Mode.WITH_CAP)
    r = mumtoc.run(inst, 0)
    assert r.decision.count(Placement.CAP) == 0


def test_lower_bound_sandwich(friendly):
    for seed in range(10):
        inst = make(friendly, 2, 2, seed, Mode.WITH_CAP)
        lb = mumtoc.lower_bound_cap(inst)
        assert lb <= exhaustive(inst, BoundKind.LOWER).total * (1 + 1e-9)
        assert lb <= mumtoc.run(inst, seed).cost.total * (1 + 1e-9)


def test_requires_cap(defaults):
    with pytest.raises(ValueError):
        mumtoc.run(make(defaults, 1, 1))
