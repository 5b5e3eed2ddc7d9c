"""Optimal bandwidth / CAP-rate allocation for fixed offloading decisions.

For a fixed decision the worst-case cost of user i is

    E_i + rho_i * max(T^L_i, W_i + max(K_i, Y_i / f_i)),
    W_i = U_i / c_u + Dn_i / c_d,

where U_i, Dn_i are the offloaded upload / download work (bits over
spectral efficiency), K_i the AP-cloud transfer plus cloud processing time
of the cloud tasks and Y_i the cycles of the CAP tasks. The epigraph form
(variables c_u, c_d, f_a and t per offloading user) is convex and is solved
with a log-barrier Newton method. Problems are solved in batches: every
array carries a leading batch axis, one entry per decision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import costs
from .model import Allocation, BoundKind, Decision, Instance, Mode, Placement

GAP_REL_TOL = 1e-9
NEWTON_TOL = 1e-9
BARRIER_STEP = 50.0
DOMINATED_REL = 1e-6
BANDWIDTH_FLOOR = 1e-9  # fraction of c_total


@dataclass(frozen=True)
class CostTable:
    """Per-task constants of an instance as padded (n_users, max_tasks) arrays."""

    instance: Instance
    valid: np.ndarray
    e_local: np.ndarray
    e_cap: np.ndarray
    e_cloud: np.ndarray
    t_local: np.ndarray
    up_work: np.ndarray  # d_in / eta_u, Hz*s
    down_work: np.ndarray  # d_out / eta_d
    t_ac: np.ndarray
    t_cloud: np.ndarray
    cycles: np.ndarray
    d_in: np.ndarray
    d_out: np.ndarray
    rho: np.ndarray

    @classmethod
    def of(cls, instance: Instance) -> "CostTable":
        n, m = instance.n_users, max(instance.task_counts)
        arrays = {k: np.zeros((n, m)) for k in (
            "e_local", "e_cap", "e_cloud", "t_local", "up_work", "down_work",
            "t_ac", "t_cloud", "cycles", "d_in", "d_out")}
        valid = np.zeros((n, m), dtype=bool)
        for i, (user, row) in enumerate(zip(instance.users, costs.instance_task_costs(instance))):
            for j, (task, tc) in enumerate(zip(user.tasks, row)):
                valid[i, j] = True
                arrays["e_local"][i, j] = tc.e_local
                arrays["e_cap"][i, j] = tc.e_cap
                arrays["e_cloud"][i, j] = tc.e_cloud
                arrays["t_local"][i, j] = tc.t_local
                arrays["up_work"][i, j] = task.d_in / user.eta_u
                arrays["down_work"][i, j] = task.d_out / user.eta_d
                arrays["t_ac"][i, j] = tc.t_ac
                arrays["t_cloud"][i, j] = tc.t_cloud
                arrays["cycles"][i, j] = task.cycles
                arrays["d_in"][i, j] = task.d_in
                arrays["d_out"][i, j] = task.d_out
        rho = np.array([u.rho for u in instance.users])
        return cls(instance=instance, valid=valid, rho=rho, **arrays)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class Aggregates:
    """Per-user sums for a batch of decisions; every field is (batch, n_users)."""

    energy: np.ndarray
    t_local: np.ndarray
    up: np.ndarray
    down: np.ndarray
    k_cloud: np.ndarray
    y_cap: np.ndarray
    has_cap: np.ndarray
    has_cloud: np.ndarray
    # pieces of the best-case bound
    up_cap: np.ndarray
    down_cap: np.ndarray
    up_cloud: np.ndarray
    down_cloud: np.ndarray
    ac_in: np.ndarray
    ac_out: np.ndarray
    proc_cloud: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.has_cap | self.has_cloud


def aggregate(table: CostTable, placements: np.ndarray) -> Aggregates:
    """Sum task constants per user for placements of shape (batch, n, m)."""
    X = np.asarray(placements)
    if X.ndim == 2:
        X = X[None]
    valid = table.valid[None]
    loc = (X == Placement.LOCAL) & valid
    cap = (X == Placement.CAP) & valid
    cld = (X == Placement.CLOUD) & valid
    off = cap | cld
    r_ac = table.instance.params.r_ac

    def s(mask, arr):
        return np.where(mask, arr[None], 0.0).sum(axis=2)

    energy = s(loc, table.e_local) + s(cap, table.e_cap) + s(cld, table.e_cloud)
    return Aggregates(
        energy=energy,
        t_local=s(loc, table.t_local),
        up=s(off, table.up_work),
        down=s(off, table.down_work),
        k_cloud=s(cld, table.t_ac + table.t_cloud),
        y_cap=s(cap, table.cycles),
        has_cap=cap.any(axis=2),
        has_cloud=cld.any(axis=2),
        up_cap=s(cap, table.up_work),
        down_cap=s(cap, table.down_work),
        up_cloud=s(cld, table.up_work),
        down_cloud=s(cld, table.down_work),
        ac_in=s(cld, table.d_in) / r_ac,
        ac_out=s(cld, table.d_out) / r_ac,
        proc_cloud=s(cld, table.t_cloud),
    )


def _safe_div(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0)
        return np.where((num > 0) & ~(den > 0), np.inf, out)


def user_delays(agg: Aggregates, c_u, c_d, f_a, bound: BoundKind = BoundKind.UPPER) -> np.ndarray:
    """max{T^L, T^A, T^C} per user, shape (batch, n). Infinite when a resource is missing."""
    if bound is BoundKind.UPPER:
        wireless = _safe_div(agg.up, c_u) + _safe_div(agg.down, c_d)
        offload = wireless + np.maximum(agg.k_cloud, _safe_div(agg.y_cap, f_a))
        offload = np.where(agg.active, offload, 0.0)
    else:
        t_cap = np.maximum.reduce([
            _safe_div(agg.up_cap, c_u), _safe_div(agg.down_cap, c_d), _safe_div(agg.y_cap, f_a)])
        t_cloud = np.maximum.reduce([
            _safe_div(agg.up_cloud, c_u), _safe_div(agg.down_cloud, c_d),
            agg.ac_in, agg.ac_out, agg.proc_cloud])
        offload = np.maximum(t_cap, t_cloud)
    return np.maximum(agg.t_local, offload)


def batch_cost(table: CostTable, agg: Aggregates, c_u, c_d, f_a, bound=BoundKind.UPPER):
    """(energy, delay cost) per batch entry."""
    delay = (table.rho[None] * user_delays(agg, c_u, c_d, f_a, bound)).sum(axis=1)
    return agg.energy.sum(axis=1), delay


class _Budgets:
    """Scaled budgets: bandwidth in units of c_total, CAP rate in units of f_a_total."""

    def __init__(self, instance: Instance, batch: int):
        p = instance.params
        self.c_scale = p.c_total
        self.f_scale = p.f_a_total if p.f_a_total > 0 else 1.0
        self.ul = np.full(batch, p.c_ul / p.c_total)
        self.dl = np.full(batch, p.c_dl / p.c_total)
        self.tot = np.ones(batch)
        self.cpu = np.ones(batch) if p.f_a_total > 0 else np.zeros(batch)

    def minus(self, bu, bd, phi):
        out = object.__new__(_Budgets)
        out.c_scale, out.f_scale = self.c_scale, self.f_scale
        out.ul = self.ul - bu.sum(axis=1)
        out.dl = self.dl - bd.sum(axis=1)
        out.tot = self.tot - (bu + bd).sum(axis=1)
        out.cpu = self.cpu - phi.sum(axis=1)
        return out


class _Barrier:
    """Batched log-barrier Newton solver for the epigraph problem.

    Variables per problem are [b_u (n), b_d (n), phi (n), t (n)] with b the
    bandwidth fraction of c_total and phi the fraction of f_a_total.
    """

    def __init__(self, agg: Aggregates, rho, budgets: _Budgets, act, cap):
        self.B, self.n = act.shape
        n = self.n
        self.rho = np.broadcast_to(rho, (self.B, n))
        self.TL = agg.t_local
        # users outside this solve carry no load, so their frozen zeros stay finite
        self.Uh = np.where(act, agg.up / budgets.c_scale, 0.0)
        self.Dh = np.where(act, agg.down / budgets.c_scale, 0.0)
        self.Yh = np.where(cap & act, agg.y_cap / budgets.f_scale, 0.0)
        self.K = agg.k_cloud
        self.act = act
        self.cap = cap & act
        self.loc = act & (self.TL > 0)
        self.any_act = act.any(axis=1)
        self.any_cap = self.cap.any(axis=1)
        self.bud = budgets
        self.m = (self.loc.sum(1) + act.sum(1) + self.cap.sum(1)
                  + 3 * self.any_act + self.any_cap).astype(float)
        self.idx = np.stack([np.arange(n), n + np.arange(n), 2 * n + np.arange(n), 3 * n + np.arange(n)], 1)
        # variables that do not take part in a problem are frozen
        self.free = np.concatenate([act, act, self.cap, act], axis=1)

    def start(self):
        n_act = np.maximum(self.act.sum(1), 1)[:, None]
        n_cap = np.maximum(self.cap.sum(1), 1)[:, None]
        room = np.minimum.reduce([self.bud.ul, self.bud.dl, self.bud.tot / 2])[:, None]
        bu = np.where(self.act, 0.9 * room / n_act, 0.0)
        bd = bu.copy()
        phi = np.where(self.cap, 0.9 * self.bud.cpu[:, None] / n_cap, 0.0)
        g = self._offload(bu, bd, phi)
        t = np.where(self.act, 1.5 * np.maximum(self.TL, g) + 1.0, self.TL)
        return np.concatenate([bu, bd, phi, t], axis=1)

    def split(self, v):
        n = self.n
        return v[:, :n], v[:, n:2 * n], v[:, 2 * n:3 * n], v[:, 3 * n:]

    def _offload(self, bu, bd, phi):
        w = _safe_div(self.Uh, bu) + _safe_div(self.Dh, bd)
        return w + np.maximum(self.K, np.where(self.cap, _safe_div(self.Yh, phi), 0.0))

    def slacks(self, v):
        bu, bd, phi, t = self.split(v)
        w = _safe_div(self.Uh, bu) + _safe_div(self.Dh, bd)
        gL = t - self.TL
        gC = t - w - self.K
        gA = t - w - _safe_div(self.Yh, phi)
        gu = self.bud.ul - np.where(self.act, bu, 0).sum(1)
        gd = self.bud.dl - np.where(self.act, bd, 0).sum(1)
        gs = self.bud.tot - np.where(self.act, bu + bd, 0).sum(1)
        gf = self.bud.cpu - np.where(self.cap, phi, 0).sum(1)
        return gL, gC, gA, gu, gd, gs, gf

    def value(self, v, s):
        """Barrier objective; +inf outside the domain."""
        bu, bd, phi, t = self.split(v)
        gL, gC, gA, gu, gd, gs, gf = self.slacks(v)
        bad = np.zeros(self.B, dtype=bool)
        bad |= (self.act & ((bu <= 0) | (bd <= 0) | ~(gC > 0))).any(1)
        bad |= (self.loc & ~(gL > 0)).any(1)
        bad |= (self.cap & ((phi <= 0) | ~(gA > 0))).any(1)
        bad |= self.any_act & ~((gu > 0) & (gd > 0) & (gs > 0))
        bad |= self.any_cap & ~(gf > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = s * np.where(self.act, self.rho * t, 0).sum(1)
            f -= np.where(self.loc, np.log(np.where(self.loc, gL, 1)), 0).sum(1)
            f -= np.where(self.act, np.log(np.where(self.act, gC, 1)), 0).sum(1)
            f -= np.where(self.cap, np.log(np.where(self.cap, gA, 1)), 0).sum(1)
            f -= np.where(self.any_act, np.log(np.where(self.any_act, gu * gd * gs, 1)), 0)
            f -= np.where(self.any_cap, np.log(np.where(self.any_cap, gf, 1)), 0)
        return np.where(bad, np.inf, f)

    def newton(self, v, s):
        B, n = self.B, self.n
        bu, bd, phi, t = self.split(v)
        gL, gC, gA, gu, gd, gs, gf = self.slacks(v)
        one = np.ones_like(bu)
        zero = np.zeros_like(bu)
        dU = _safe_div(self.Uh, bu * bu)
        dD = _safe_div(self.Dh, bd * bd)
        dY = np.where(self.cap, _safe_div(self.Yh, phi * phi), 0.0)
        hU = 2 * _safe_div(self.Uh, bu ** 3)
        hD = 2 * _safe_div(self.Dh, bd ** 3)
        hY = np.where(self.cap, 2 * _safe_div(self.Yh, phi ** 3), 0.0)

        grad_blk = np.zeros((B, n, 4))
        H_blk = np.zeros((B, n, 4, 4))
        grad_blk[..., 3] = s[:, None] * self.rho
        # (mask, slack, gradient of the constraint, diagonal of its hessian)
        terms = (
            (self.loc, gL, np.stack([zero, zero, zero, one], -1), None),
            (self.act, gC, np.stack([dU, dD, zero, one], -1), np.stack([-hU, -hD, zero, zero], -1)),
            (self.cap, gA, np.stack([dU, dD, dY, one], -1), np.stack([-hU, -hD, -hY, zero], -1)),
        )
        for mask, g, dg, hg in terms:
            inv = np.where(mask, 1.0 / np.where(mask, g, 1.0), 0.0)[..., None]
            grad_blk -= dg * inv
            H_blk += dg[..., :, None] * dg[..., None, :] * (inv ** 2)[..., None]
            if hg is not None:
                H_blk[..., [0, 1, 2, 3], [0, 1, 2, 3]] -= hg * inv

        N4 = 4 * n
        grad = np.zeros((B, N4))
        H = np.zeros((B, N4, N4))
        grad[:, self.idx.reshape(-1)] = grad_blk.reshape(B, -1)
        H[:, self.idx[:, :, None], self.idx[:, None, :]] = H_blk

        # budget rows: slack = budget - a.v  with 0/1 coefficient vectors a
        a_u = np.concatenate([self.act, 0 * self.act, 0 * self.act, 0 * self.act], 1).astype(float)
        a_d = np.concatenate([0 * self.act, self.act, 0 * self.act, 0 * self.act], 1).astype(float)
        a_f = np.concatenate([0 * self.act, 0 * self.act, self.cap, 0 * self.act], 1).astype(float)
        for a, g, mask in ((a_u, gu, self.any_act), (a_d, gd, self.any_act),
                           (a_u + a_d, gs, self.any_act), (a_f, gf, self.any_cap)):
            inv = np.where(mask, 1.0 / np.where(mask, g, 1.0), 0.0)
            grad += a * inv[:, None]
            H += a[:, :, None] * a[:, None, :] * (inv ** 2)[:, None, None]

        free = self.free
        grad = np.where(free, grad, 0.0)
        H = np.where(free[:, :, None] & free[:, None, :], H, 0.0)
        H[:, np.arange(N4), np.arange(N4)] += np.where(free, 0.0, 1.0)
        step = -np.linalg.solve(H, grad[..., None])[..., 0]
        return step, grad

    def solve(self, v=None):
        v = self.start() if v is None else v
        todo = self.any_act.copy()
        _, _, _, t = self.split(v)
        obj = np.where(self.act, self.rho * t, 0).sum(1)
        s = 10.0 * np.maximum(self.m, 1.0) / np.maximum(obj, 1e-12)
        while todo.any():
            v = self._center(v, s, todo)
            _, _, _, t = self.split(v)
            obj = np.where(self.act, self.rho * t, 0).sum(1)
            todo &= self.m / s > GAP_REL_TOL * np.maximum(obj, 1e-12)
            s = np.where(todo, s * BARRIER_STEP, s)
        return v

    def _center(self, v, s, todo):
        live = todo.copy()
        for _ in range(200):
            if not live.any():
                break
            step, grad = self.newton(v, s)
            dec = -(grad * step).sum(1)
            live &= dec / 2 > NEWTON_TOL
            if not live.any():
                break
            f0 = self.value(v, s)
            alpha = np.where(live, 1.0, 0.0)
            pending = live.copy()
            for _ in range(80):
                trial = v + alpha[:, None] * step
                # the slack term absorbs rounding once s * objective is large
                ok = self.value(trial, s) <= f0 - 0.25 * alpha * dec + 1e-13 * np.abs(f0)
                pending &= ~ok
                if not pending.any():
                    break
                alpha = np.where(pending, alpha * 0.5, alpha)
            alpha = np.where(pending, 0.0, alpha)
            live &= alpha > 0
            v = v + alpha[:, None] * step
        return v


@dataclass
class BatchAllocation:
    """Allocations (SI units) and worst-case costs for a batch of decisions."""

    c_u: np.ndarray
    c_d: np.ndarray
    f_a: np.ndarray
    energy: np.ndarray
    delay: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.energy + self.delay

    def allocation(self, k: int, mode: Mode) -> Allocation:
        f_a = tuple(self.f_a[k]) if mode is Mode.WITH_CAP else ()
        return Allocation(tuple(self.c_u[k]), tuple(self.c_d[k]), f_a)


def _dominated_scale(agg, bar: _Barrier, v, dominated):
    """Factor in (0, 1] that shrinks a user's resources until its offload delay equals T^L."""
    bu, bd, phi, _ = bar.split(v)
    W = _safe_div(bar.Uh, bu) + _safe_div(bar.Dh, bd)
    P = np.where(bar.cap, _safe_div(bar.Yh, phi), 0.0)
    TL = np.where(dominated, bar.TL, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.where(bar.K > 0, W / np.maximum(TL - bar.K, 1e-300), 0.0)
        s2 = (W + P) / TL
    return np.where(dominated, np.clip(np.maximum(s1, s2), 0.0, 1.0), 1.0)


def allocate_batch(table: CostTable, placements: np.ndarray) -> BatchAllocation:
    """Optimal worst-case allocation for every decision in ``placements`` (batch, n, m)."""
    inst = table.instance
    X = np.asarray(placements)
    if X.ndim == 2:
        X = X[None]
    agg = aggregate(table, X)
    B, n = agg.energy.shape
    act = agg.active
    cap = agg.has_cap
    if inst.mode is Mode.NO_CAP and cap.any():
        raise ValueError("CAP placements in a no-CAP instance")
    budgets = _Budgets(inst, B)

    bar = _Barrier(agg, table.rho, budgets, act, cap)
    v = bar.solve()
    bu, bd, phi, _ = bar.split(v)

    # Users whose local delay dominates keep only what they need; the
    # released share goes to the others in one more solve.
    offload = bar._offload(bu, bd, phi)
    dominated = act & (offload < agg.t_local * (1 - DOMINATED_REL))
    if dominated.any():
        scale = _dominated_scale(agg, bar, v, dominated)
        keep_u = np.where(dominated, bu * scale, 0.0)
        keep_d = np.where(dominated, bd * scale, 0.0)
        keep_f = np.where(dominated & cap, phi * scale, 0.0)
        rows = dominated.any(axis=1)
        rest = act & ~dominated
        bar2 = _Barrier(agg, table.rho, budgets.minus(keep_u, keep_d, keep_f),
                        rest & rows[:, None], cap)
        v2 = bar2.solve()
        bu2, bd2, phi2, _ = bar2.split(v2)
        bu = np.where(rows[:, None], np.where(dominated, keep_u, bu2), bu)
        bd = np.where(rows[:, None], np.where(dominated, keep_d, bd2), bd)
        phi = np.where(rows[:, None], np.where(dominated, keep_f, phi2), phi)
        free = np.where(rows[:, None], rest, act)
    else:
        free = act

    # hand any leftover budget to the users that still benefit from it
    fixed = act & ~free
    rem = budgets.minus(np.where(fixed, bu, 0), np.where(fixed, bd, 0), np.where(fixed & cap, phi, 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        su = np.where(free, bu, 0).sum(1)
        sd = np.where(free, bd, 0).sum(1)
        kb = np.minimum.reduce([rem.ul / su, rem.dl / sd, rem.tot / (su + sd)])
        kb = np.where((su > 0) & np.isfinite(kb) & (kb > 1), kb * (1 - 1e-12), 1.0)
        sf = np.where(free & cap, phi, 0).sum(1)
        kf = np.where(sf > 0, rem.cpu / np.where(sf > 0, sf, 1), 1.0)
        kf = np.where(kf > 1, kf * (1 - 1e-12), 1.0)
    bu = np.where(free, bu * kb[:, None], bu)
    bd = np.where(free, bd * kb[:, None], bd)
    phi = np.where(free & cap, phi * kf[:, None], phi)

    floor = BANDWIDTH_FLOOR
    bu = np.where(act, np.maximum(bu, floor), 0.0)
    bd = np.where(act, np.maximum(bd, floor), 0.0)
    phi = np.where(cap, phi, 0.0)
    c_u = bu * budgets.c_scale
    c_d = bd * budgets.c_scale
    f_a = phi * budgets.f_scale
    energy, delay = batch_cost(table, agg, c_u, c_d, f_a)
    return BatchAllocation(c_u, c_d, f_a, energy, delay)


def allocate(instance: Instance, decision: Decision, table: CostTable | None = None):
    """Optimal allocation for one decision and its worst-case cost breakdown."""
    decision.check(instance)
    table = table or CostTable.of(instance)
    res = allocate_batch(table, decision.as_array(table.shape[1])[None])
    alloc = res.allocation(0, instance.mode)
    return alloc, costs.total_cost(instance, decision, alloc, BoundKind.UPPER)
