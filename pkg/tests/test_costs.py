from dataclasses import replace

import numpy as np
import pytest

from offload import costs
from offload.model import (
    Allocation,
    BoundKind,
    Decision,
    Instance,
    Mode,
    TaskSpec,
    UserProfile,
    default_params,
)
from offload.oracle import random_decision

from conftest import make


@pytest.fixture
def task20():
    return TaskSpec(1.6e8, 1.6e7, 3.8e10)


def one_user(tasks, mode=Mode.NO_CAP, rho=1.0):
    params, device = default_params()
    return Instance((UserProfile(3.5, 3.5, rho, tuple(tasks), device),), params, mode)


def test_task_constants(task20):
    params, device = default_params()
    tc = costs.task_costs(task20, device, params)
    assert tc.e_local == pytest.approx(52.0, rel=1e-12)
    assert tc.t_local == pytest.approx(76.0, rel=1e-12)
    assert tc.t_ac == pytest.approx(11.7333333333, rel=1e-9)
    assert tc.t_cloud == pytest.approx(3.8, rel=1e-12)
    assert tc.e_tx == pytest.approx(1.42e-7 * 1.6e8)
    assert tc.e_rx == pytest.approx(1.42e-7 * 1.6e7)
    # usage in bits and Hz: d_in + 1e18/1e10 + 2 * 1e16/4e7
    assert tc.usage_cloud == pytest.approx(1.6e8 + 1e8 + 5e8)
    assert tc.usage_cap == tc.usage_cloud  # f_a_total == f_c at defaults
    assert tc.e_cloud == pytest.approx(tc.e_tx + tc.e_rx + 2.5e-7 * tc.usage_cloud)


def test_usage_unit_switch(task20):
    params, device = default_params()
    p = replace(params, usage_data_unit=8.0, usage_bandwidth_unit=1e6)
    tc = costs.task_costs(task20, device, p)
    assert tc.usage_cloud == pytest.approx(2e7 + 1e8 + 2 * 1e16 / 40)


def test_worst_and_best_cloud_delay(task20):
    inst = one_user([task20])
    alloc = Allocation((2e7,), (2e7,))
    dec = Decision.all_cloud(inst)
    up = costs.delay_report(inst, dec, alloc, BoundKind.UPPER)
    lo = costs.delay_report(inst, dec, alloc, BoundKind.LOWER)
    assert up.t_cloud[0] == pytest.approx(18.0476, abs=1e-4)
    assert lo.t_cloud[0] == pytest.approx(10.6667, abs=1e-4)
    assert up.t_cap[0] == lo.t_cap[0] == 0.0


def test_all_local_delay_and_total():
    inst = one_user([TaskSpec(1.6e8, 1.6e7, 3.8e10), TaskSpec(8e7, 8e6, 1.9e10)])
    dec = Decision.all_local(inst)
    alloc = Allocation.zeros(inst)
    rep = costs.delay_report(inst, dec, alloc)
    assert rep.t_local_sum[0] == pytest.approx(114.0)
    assert rep.t_cloud[0] == rep.t_cap[0] == 0.0
    up = costs.total_cost(inst, dec, alloc, BoundKind.UPPER)
    lo = costs.total_cost(inst, dec, alloc, BoundKind.LOWER)
    assert up.total == pytest.approx(192.0)
    assert up == lo
    assert costs.local_only_cost(inst) == pytest.approx(192.0)


def test_missing_bandwidth_is_an_error(task20):
    inst = one_user([task20])
    with pytest.raises(costs.InfeasibleAllocationError):
        costs.delay_report(inst, Decision.all_cloud(inst), Allocation((0.0,), (1e7,)))
    cap = one_user([task20], Mode.WITH_CAP)
    with pytest.raises(costs.InfeasibleAllocationError):
        costs.delay_report(cap, Decision.from_string("A"), Allocation((1e7,), (1e7,), (0.0,)))


def _random_alloc(instance, rng):
    n = instance.n_users
    p = instance.params
    share = rng.dirichlet(np.ones(2 * n)) * p.c_total * 0.999
    f = rng.dirichlet(np.ones(n)) * p.f_a_total * 0.999 if instance.mode is Mode.WITH_CAP else ()
    return Allocation(tuple(share[:n]), tuple(share[n:]), tuple(f))


@pytest.mark.parametrize("mode", list(Mode))
def test_bound_sandwich_and_scaling(defaults, mode):
    rng = np.random.default_rng(5)
    for seed in range(30):
        inst = make(defaults, 3, 3, seed, mode)
        dec = random_decision(inst, seed)
        alloc = _random_alloc(inst, rng)
        up = costs.delay_report(inst, dec, alloc, BoundKind.UPPER)
        lo = costs.delay_report(inst, dec, alloc, BoundKind.LOWER)
        for i in range(inst.n_users):
            assert lo.t_cap[i] <= up.t_cap[i] + 1e-12
            assert lo.t_cloud[i] <= up.t_cloud[i] + 1e-12
            assert lo.user_delay(i) <= up.user_delay(i) + 1e-12
        base = costs.total_cost(inst, dec, alloc)
        doubled = replace(inst, users=(replace(inst.users[0], rho=2 * inst.users[0].rho),) + inst.users[1:])
        twice = costs.total_cost(doubled, dec, alloc)
        assert twice.energy_and_usage == base.energy_and_usage
        assert twice.delay_cost - base.delay_cost == pytest.approx(up.user_delay(0), rel=1e-9)


@pytest.mark.parametrize("bound", list(BoundKind))
def test_more_uplink_never_hurts(defaults, bound):
    rng = np.random.default_rng(9)
    for seed in range(30):
        inst = make(defaults, 3, 2, seed, Mode.WITH_CAP)
        dec = random_decision(inst, seed)
        alloc = _random_alloc(inst, rng)
        i = int(rng.integers(inst.n_users))
        more = replace(alloc, c_u=tuple(c * (1.5 if k == i else 1) for k, c in enumerate(alloc.c_u)))
        assert costs.total_cost(inst, dec, more, bound).total <= costs.total_cost(inst, dec, alloc, bound).total
