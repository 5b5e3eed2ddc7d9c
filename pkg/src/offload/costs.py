"""Per-task energies and delays, delay bounds and the total system cost.

This is the reference evaluator: plain loops over users and tasks, kept
deliberately simple so that the matrix form in :mod:`offload.qcqp` and the
vectorised evaluators in :mod:`offload.alloc` can be checked against it.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import (
    Allocation,
    BoundKind,
    Decision,
    DeviceProfile,
    Instance,
    Mode,
    Placement,
    SystemParams,
    TaskSpec,
)


class InfeasibleAllocationError(ValueError):
    """An offloading user has no bandwidth, or a CAP user has no CPU share."""


@dataclass(frozen=True)
class TaskCosts:
    e_local: float  # J
    t_local: float  # s
    e_tx: float  # J
    e_rx: float  # J
    t_ac: float  # s, AP <-> cloud transfer
    t_cloud: float  # s
    usage_cloud: float
    usage_cap: float
    e_cloud: float  # E^C: e_tx + e_rx + beta * usage_cloud
    e_cap: float  # E^A: e_tx + e_rx + alpha * usage_cap

    def energy(self, where: Placement) -> float:
        if where is Placement.LOCAL:
            return self.e_local
        if where is Placement.CAP:
            return self.e_cap
        return self.e_cloud


@dataclass(frozen=True)
class DelayReport:
    t_local_sum: tuple[float, ...]
    t_cap: tuple[float, ...]
    t_cloud: tuple[float, ...]
    bound_kind: BoundKind

    def user_delay(self, i: int) -> float:
        return max(self.t_local_sum[i], self.t_cap[i], self.t_cloud[i])


@dataclass(frozen=True)
class CostBreakdown:
    energy_and_usage: float  # J
    delay_cost: float  # J
    total: float  # J

    @classmethod
    def of(cls, energy: float, delay: float) -> "CostBreakdown":
        return cls(energy, delay, energy + delay)


def usage_cost(d_in: float, rate: float, params: SystemParams) -> float:
    """Usage charge ``D_in + l1/rate + l2/C_UL + l3/C_DL`` in the configured units."""
    bw = params.usage_bandwidth_unit
    cost = d_in / params.usage_data_unit
    cost += params.lambda1 / rate if rate > 0 else float("inf")
    cost += params.lambda2 / (params.c_ul / bw) + params.lambda3 / (params.c_dl / bw)
    return cost


def task_costs(task: TaskSpec, device: DeviceProfile, params: SystemParams) -> TaskCosts:
    e_tx = device.tx_energy_per_bit * task.d_in
    e_rx = device.rx_energy_per_bit * task.d_out
    usage_cloud = usage_cost(task.d_in, params.f_c, params)
    usage_cap = usage_cost(task.d_in, params.f_a_total, params)
    return TaskCosts(
        e_local=device.local_energy_per_bit * task.d_in,
        t_local=device.local_time_per_bit * task.d_in,
        e_tx=e_tx,
        e_rx=e_rx,
        t_ac=(task.d_in + task.d_out) / params.r_ac,
        t_cloud=task.cycles / params.f_c,
        usage_cloud=usage_cloud,
        usage_cap=usage_cap,
        e_cloud=e_tx + e_rx + params.beta * usage_cloud,
        e_cap=e_tx + e_rx + params.alpha * usage_cap,
    )


def instance_task_costs(instance: Instance) -> list[list[TaskCosts]]:
    return [
        [task_costs(t, u.device, instance.params) for t in u.tasks] for u in instance.users
    ]


def delay_report(
    instance: Instance,
    decision: Decision,
    alloc: Allocation,
    bound_kind: BoundKind = BoundKind.UPPER,
) -> DelayReport:
    """Local delay and bounds on the CAP and cloud delays of every user."""
    decision.check(instance)
    p = instance.params
    t_local, t_cap, t_cloud = [], [], []
    for i, user in enumerate(instance.users):
        row = decision.placement[i]
        tc = [task_costs(t, user.device, p) for t in user.tasks]
        local = [j for j, w in enumerate(row) if w is Placement.LOCAL]
        at_cap = [j for j, w in enumerate(row) if w is Placement.CAP]
        at_cloud = [j for j, w in enumerate(row) if w is Placement.CLOUD]
        t_local.append(sum(tc[j].t_local for j in local))

        if not at_cap and not at_cloud:
            t_cap.append(0.0)
            t_cloud.append(0.0)
            continue
        c_u, c_d, f_a = alloc.c_u[i], alloc.c_d[i], alloc.f_a_of(i)
        if not (c_u > 0 and c_d > 0):
            raise InfeasibleAllocationError(f"user {i} offloads tasks but has no bandwidth")
        if at_cap and not f_a > 0:
            raise InfeasibleAllocationError(f"user {i} places tasks at the CAP but has no CAP rate")

        def up(j):
            return user.tasks[j].d_in / (user.eta_u * c_u)

        def down(j):
            return user.tasks[j].d_out / (user.eta_d * c_d)

        def cap_proc(j):
            return user.tasks[j].cycles / f_a

        if bound_kind is BoundKind.UPPER:
            wireless = sum(up(j) + down(j) for j in at_cap + at_cloud)
            t_cap.append(wireless + sum(cap_proc(j) for j in at_cap) if at_cap else 0.0)
            t_cloud.append(
                wireless + sum(tc[j].t_ac + tc[j].t_cloud for j in at_cloud) if at_cloud else 0.0
            )
        else:
            if at_cap:
                t_cap.append(max(
                    sum(up(j) for j in at_cap),
                    sum(down(j) for j in at_cap),
                    sum(cap_proc(j) for j in at_cap),
                ))
            else:
                t_cap.append(0.0)
            if at_cloud:
                t_cloud.append(max(
                    sum(up(j) for j in at_cloud),
                    sum(down(j) for j in at_cloud),
                    sum(user.tasks[j].d_in for j in at_cloud) / p.r_ac,
                    sum(user.tasks[j].d_out for j in at_cloud) / p.r_ac,
                    sum(tc[j].t_cloud for j in at_cloud),
                ))
            else:
                t_cloud.append(0.0)

    if instance.mode is Mode.NO_CAP:
        t_cap = [0.0] * len(t_cap)
    return DelayReport(tuple(t_local), tuple(t_cap), tuple(t_cloud), bound_kind)


def energy_and_usage(instance: Instance, decision: Decision) -> float:
    total = 0.0
    for i, user in enumerate(instance.users):
        for task, where in zip(user.tasks, decision.placement[i]):
            total += task_costs(task, user.device, instance.params).energy(where)
    return total


def total_cost(
    instance: Instance,
    decision: Decision,
    alloc: Allocation,
    bound_kind: BoundKind = BoundKind.UPPER,
) -> CostBreakdown:
    report = delay_report(instance, decision, alloc, bound_kind)
    delay = sum(u.rho * report.user_delay(i) for i, u in enumerate(instance.users))
    return CostBreakdown.of(energy_and_usage(instance, decision), delay)


def local_only_cost(instance: Instance) -> float:
    """Closed form of the all-local cost: every task's energy plus rho * local time."""
    total = 0.0
    for user in instance.users:
        tc = [task_costs(t, user.device, instance.params) for t in user.tasks]
        total += sum(c.e_local for c in tc) + user.rho * sum(c.t_local for c in tc)
    return total
