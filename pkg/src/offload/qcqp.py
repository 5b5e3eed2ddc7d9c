"""Homogeneous separable QCQP for the joint offloading / allocation problem.

Each user i owns a vector z_i = [w_i, 1] and the problem reads

    min   sum_i z_i' G_i z_i + offset
    s.t.  z_i' A z_i  (<= | ==)  b      per-user rows
          sum_i z_i' A_i z_i  <=  b     coupling rows (shared budgets)
          z_i >= 0

Linear terms sit in the last row/column of each matrix (homogenisation).
Inside the matrices data sizes are in Mbit, bandwidths in MHz and CPU rates
in Gcycles/s; :class:`VariableLayout` records the factor that takes each
slot back to SI units.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import costs
from .model import Allocation, BoundKind, Decision, Instance, Mode, Placement

MBIT = 1e6
MHZ = 1e6
GCYCLES = 1e9
CONDITION_LIMIT = 1e12


class ConditioningError(ValueError):
    """Scaled coefficients span too many orders of magnitude for the SDP solver."""


@dataclass(frozen=True)
class VariableLayout:
    mode: Mode
    n_tasks: int
    names: tuple[str, ...]
    scales: tuple[float, ...]  # SI value = slot value * scale

    @classmethod
    def for_user(cls, mode: Mode, n_tasks: int) -> "VariableLayout":
        if mode is Mode.NO_CAP:
            names = [f"x{j}" for j in range(n_tasks)]
            tail = ["c_u", "D_u", "c_d", "D_d", "t", "hom"]
        else:
            names = [f"x{s}{j}" for j in range(n_tasks) for s in "lac"]
            tail = ["c_u", "D_u", "c_d", "D_d", "f_a", "D_a", "t", "hom"]
        names += tail
        unit = {"c_u": MHZ, "c_d": MHZ, "f_a": GCYCLES}
        return cls(mode, n_tasks, tuple(names), tuple(unit.get(n, 1.0) for n in names))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def hom(self) -> int:
        return self.dim - 1

    def index(self, name: str) -> int:
        return self.names.index(name)

    def x_slots(self) -> list[int]:
        return [k for k, n in enumerate(self.names) if n.startswith("x")]

    def slot(self, task: int, where: Placement = Placement.CLOUD) -> int:
        """Slot of the placement indicator of ``task``."""
        if self.mode is Mode.NO_CAP:
            if where is Placement.CAP:
                raise ValueError("no CAP slots without a CAP")
            return task
        return 3 * task + int(where)

    def unscale(self, z: np.ndarray) -> dict[str, float]:
        return {n: float(v) * s for n, v, s in zip(self.names, z, self.scales)}


@dataclass(frozen=True)
class QuadConstraint:
    matrix: np.ndarray
    sense: str  # "<=" or "=="
    rhs: float
    label: str


@dataclass(frozen=True)
class CouplingConstraint:
    matrices: tuple[np.ndarray, ...]  # one per user
    sense: str
    rhs: float
    label: str


@dataclass(frozen=True)
class SeparableQcqp:
    mode: Mode
    bound_kind: BoundKind
    layouts: tuple[VariableLayout, ...]
    objectives: tuple[np.ndarray, ...]
    offset: float
    constraints: tuple[tuple[QuadConstraint, ...], ...]
    coupling: tuple[CouplingConstraint, ...]
    nonneg: tuple[np.ndarray, ...]  # boolean flag per slot

    @property
    def n_users(self) -> int:
        return len(self.layouts)

    def objective(self, zs) -> float:
        return sum(float(z @ G @ z) for z, G in zip(zs, self.objectives)) + self.offset

    def violations(self, zs) -> list[tuple[str, float]]:
        """(label, amount) for every row that ``zs`` breaks by more than rounding."""
        out = []

        def check(label, value, sense, rhs):
            excess = value - rhs if sense == "<=" else abs(value - rhs)
            if excess > 1e-9 * max(1.0, abs(rhs), abs(value)):
                out.append((label, excess))

        for i, (z, rows) in enumerate(zip(zs, self.constraints)):
            for c in rows:
                check(f"user{i}:{c.label}", float(z @ c.matrix @ z), c.sense, c.rhs)
            for k in np.flatnonzero(self.nonneg[i]):
                if z[k] < -1e-12:
                    out.append((f"user{i}:nonneg:{self.layouts[i].names[k]}", -z[k]))
        for c in self.coupling:
            value = sum(float(z @ A @ z) for z, A in zip(zs, c.matrices))
            check(c.label, value, c.sense, c.rhs)
        return out

    def all_matrices(self):
        yield from self.objectives
        for rows in self.constraints:
            for c in rows:
                yield c.matrix
        for c in self.coupling:
            yield from c.matrices

    def dump_triplets(self, stream: io.TextIOBase | None = None) -> str:
        """Plain-text sparse dump: one ``block row col value`` line per upper-triangle entry."""
        out = stream or io.StringIO()

        def emit(tag, block, M):
            r, c = np.nonzero(np.triu(M))
            for a, b in zip(r, c):
                out.write(f"{tag} {block} {a} {b} {M[a, b]:.17g}\n")

        out.write(f"# mode={self.mode.value} bound={self.bound_kind.value} offset={self.offset:.17g}\n")
        for i, G in enumerate(self.objectives):
            out.write(f"# block {i} dim {self.layouts[i].dim} slots {' '.join(self.layouts[i].names)}\n")
            emit("obj", i, G)
        for i, rows in enumerate(self.constraints):
            for c in rows:
                out.write(f"con {i} {c.label} {c.sense} {c.rhs:.17g}\n")
                emit("a", i, c.matrix)
        for c in self.coupling:
            out.write(f"couple {c.label} {c.sense} {c.rhs:.17g}\n")
            for i, A in enumerate(c.matrices):
                emit("a", i, A)
        return out.getvalue() if stream is None else ""


class _Rows:
    """Small helper that writes symmetric matrices for one user layout."""

    def __init__(self, layout: VariableLayout):
        self.L = layout
        self.rows: list[QuadConstraint] = []

    def zero(self):
        return np.zeros((self.L.dim, self.L.dim))

    def linear(self, coefs: dict[int, float], M=None):
        M = self.zero() if M is None else M
        h = self.L.hom
        for k, v in coefs.items():
            if k == h:
                M[h, h] += v
            else:
                M[k, h] += v / 2
                M[h, k] += v / 2
        return M

    def bilinear(self, a: int, b: int, coef: float, M):
        M[a, b] += coef / 2
        M[b, a] += coef / 2
        return M

    def add(self, label, M, sense="<=", rhs=0.0):
        self.rows.append(QuadConstraint(M, sense, float(rhs), label))

    def integrality(self):
        h = self.L.hom
        for k in self.L.x_slots():
            M = self.zero()
            M[k, k] = 1.0
            M[k, h] = M[h, k] = -0.5
            self.add(f"binary:{self.L.names[k]}", M, "==", 0.0)


def _user_block(instance: Instance, i: int, bound: BoundKind):
    user = instance.users[i]
    p = instance.params
    tcs = [costs.task_costs(t, user.device, p) for t in user.tasks]
    M = len(user.tasks)
    L = VariableLayout.for_user(instance.mode, M)
    R = _Rows(L)
    ix = L.index
    cu, Du, cd, Dd, t = ix("c_u"), ix("D_u"), ix("c_d"), ix("D_d"), ix("t")
    d_in = [task.d_in / MBIT for task in user.tasks]
    d_out = [task.d_out / MBIT for task in user.tasks]
    r_ac = p.r_ac / MBIT
    offset = 0.0

    if instance.mode is Mode.NO_CAP:
        x = [L.slot(j) for j in range(M)]
        obj = R.linear({**{x[j]: tcs[j].e_cloud - tcs[j].e_local for j in range(M)}, t: user.rho})
        offset = sum(c.e_local for c in tcs)
        R.add("local", R.linear({**{x[j]: -tcs[j].t_local for j in range(M)}, t: -1.0}),
              "<=", -sum(c.t_local for c in tcs))
        if bound is BoundKind.UPPER:
            R.add("offload", R.linear({**{x[j]: tcs[j].t_ac + tcs[j].t_cloud for j in range(M)},
                                       Du: 1.0, Dd: 1.0, t: -1.0}))
            R.add("uplink", R.bilinear(cu, Du, -user.eta_u, R.linear(dict(zip(x, d_in)))))
            R.add("downlink", R.bilinear(cd, Dd, -user.eta_d, R.linear(dict(zip(x, d_out)))))
        else:
            R.add("uplink", R.bilinear(cu, Du, -user.eta_u, R.linear(dict(zip(x, d_in)))))
            R.add("downlink", R.bilinear(cd, Dd, -user.eta_d, R.linear(dict(zip(x, d_out)))))
            R.add("uplink_epi", R.linear({Du: 1.0, t: -1.0}))
            R.add("downlink_epi", R.linear({Dd: 1.0, t: -1.0}))
            R.add("ac_in", R.linear({**{x[j]: d_in[j] / r_ac for j in range(M)}, t: -1.0}))
            R.add("ac_out", R.linear({**{x[j]: d_out[j] / r_ac for j in range(M)}, t: -1.0}))
            R.add("cloud_proc", R.linear({**{x[j]: tcs[j].t_cloud for j in range(M)}, t: -1.0}))
        R.integrality()
        return L, obj, offset, R.rows

    xl = [L.slot(j, Placement.LOCAL) for j in range(M)]
    xa = [L.slot(j, Placement.CAP) for j in range(M)]
    xc = [L.slot(j, Placement.CLOUD) for j in range(M)]
    fa, Da = ix("f_a"), ix("D_a")
    ycap = [task.cycles / GCYCLES for task in user.tasks]
    coefs = {t: user.rho}
    for j in range(M):
        coefs[xl[j]] = tcs[j].e_local
        coefs[xa[j]] = tcs[j].e_cap
        coefs[xc[j]] = tcs[j].e_cloud
    obj = R.linear(coefs)
    R.add("local", R.linear({**{xl[j]: tcs[j].t_local for j in range(M)}, t: -1.0}))
    if bound is BoundKind.UPPER:
        R.add("cap_path", R.linear({Du: 1.0, Dd: 1.0, Da: 1.0, t: -1.0}))
        R.add("cloud_path", R.linear({**{xc[j]: tcs[j].t_ac + tcs[j].t_cloud for j in range(M)},
                                      Du: 1.0, Dd: 1.0, t: -1.0}))
        up = {}
        down = {}
        for j in range(M):
            up[xa[j]] = up[xc[j]] = d_in[j]
            down[xa[j]] = down[xc[j]] = d_out[j]
        R.add("uplink", R.bilinear(cu, Du, -user.eta_u, R.linear(up)))
        R.add("downlink", R.bilinear(cd, Dd, -user.eta_d, R.linear(down)))
        R.add("cap_proc", R.bilinear(fa, Da, -1.0, R.linear(dict(zip(xa, ycap)))))
    else:
        for tag, slots in (("cap", xa), ("cloud", xc)):
            R.add(f"{tag}_uplink", R.bilinear(cu, Du, -user.eta_u, R.linear(dict(zip(slots, d_in)))))
            R.add(f"{tag}_downlink", R.bilinear(cd, Dd, -user.eta_d, R.linear(dict(zip(slots, d_out)))))
        R.add("cap_proc", R.bilinear(fa, Da, -1.0, R.linear(dict(zip(xa, ycap)))))
        for D in (Du, Dd, Da):
            R.add(f"{L.names[D]}_epi", R.linear({D: 1.0, t: -1.0}))
        R.add("ac_in", R.linear({**{xc[j]: d_in[j] / r_ac for j in range(M)}, t: -1.0}))
        R.add("ac_out", R.linear({**{xc[j]: d_out[j] / r_ac for j in range(M)}, t: -1.0}))
        R.add("cloud_proc", R.linear({**{xc[j]: tcs[j].t_cloud for j in range(M)}, t: -1.0}))
    for j in range(M):
        R.add(f"placement:{j}", R.linear({xl[j]: 1.0, xa[j]: 1.0, xc[j]: 1.0}), "==", 1.0)
    R.integrality()
    return L, obj, offset, R.rows


def build(instance: Instance, bound_kind: BoundKind = BoundKind.UPPER) -> SeparableQcqp:
    """Assemble the separable QCQP of ``instance`` under the given delay bound."""
    layouts, objectives, rows = [], [], []
    offset = 0.0
    for i in range(instance.n_users):
        L, G, off, R = _user_block(instance, i, bound_kind)
        layouts.append(L)
        objectives.append(G)
        rows.append(tuple(R))
        offset += off

    p = instance.params

    def per_user(names):
        mats = []
        for L in layouts:
            R = _Rows(L)
            mats.append(R.linear({L.index(n): 1.0 for n in names}))
        return tuple(mats)

    coupling = [
        CouplingConstraint(per_user(["c_u"]), "<=", p.c_ul / MHZ, "uplink_budget"),
        CouplingConstraint(per_user(["c_d"]), "<=", p.c_dl / MHZ, "downlink_budget"),
        CouplingConstraint(per_user(["c_u", "c_d"]), "<=", p.c_total / MHZ, "total_budget"),
    ]
    if instance.mode is Mode.WITH_CAP:
        coupling.append(CouplingConstraint(per_user(["f_a"]), "<=", p.f_a_total / GCYCLES, "cap_budget"))
    nonneg = tuple(np.array([n != "hom" for n in L.names]) for L in layouts)
    problem = SeparableQcqp(
        instance.mode, bound_kind, tuple(layouts), tuple(objectives), offset,
        tuple(rows), tuple(coupling), nonneg)
    _check_conditioning(problem)
    return problem


def _check_conditioning(problem: SeparableQcqp) -> None:
    values = np.concatenate([np.abs(M[M != 0]) for M in problem.all_matrices()])
    values = values[np.isfinite(values)]
    if values.size == 0:
        return
    if not np.all(np.isfinite(np.concatenate([M.ravel() for M in problem.all_matrices()]))):
        raise ConditioningError("non-finite coefficient in the QCQP matrices")
    ratio = values.max() / values.min()
    if ratio > CONDITION_LIMIT:
        raise ConditioningError(f"coefficient range {ratio:.3g} exceeds {CONDITION_LIMIT:.0e}")


def lift(problem: SeparableQcqp, instance: Instance, decision: Decision, alloc: Allocation) -> list[np.ndarray]:
    """The feasible point z_i that encodes (decision, alloc) with tight auxiliaries."""
    report = costs.delay_report(instance, decision, alloc, problem.bound_kind)
    zs = []
    for i, (L, user) in enumerate(zip(problem.layouts, instance.users)):
        z = np.zeros(L.dim)
        row = decision.placement[i]
        for j, where in enumerate(row):
            if L.mode is Mode.NO_CAP:
                z[L.slot(j)] = float(where is Placement.CLOUD)
            else:
                z[L.slot(j, where)] = 1.0
        c_u, c_d, f_a = alloc.c_u[i], alloc.c_d[i], alloc.f_a_of(i)
        z[L.index("c_u")] = c_u / MHZ
        z[L.index("c_d")] = c_d / MHZ
        z[L.index("t")] = report.user_delay(i)
        at_cap = [j for j, w in enumerate(row) if w is Placement.CAP]
        at_cloud = [j for j, w in enumerate(row) if w is Placement.CLOUD]
        if problem.bound_kind is BoundKind.UPPER:
            groups = [at_cap + at_cloud]
        else:
            groups = [at_cap, at_cloud]  # best case: each path needs its own share
        if at_cap or at_cloud:
            z[L.index("D_u")] = max(sum(user.tasks[j].d_in for j in g) for g in groups) / (user.eta_u * c_u)
            z[L.index("D_d")] = max(sum(user.tasks[j].d_out for j in g) for g in groups) / (user.eta_d * c_d)
        if L.mode is Mode.WITH_CAP:
            z[L.index("f_a")] = f_a / GCYCLES
            if at_cap:
                z[L.index("D_a")] = sum(user.tasks[j].cycles for j in at_cap) / f_a
        z[L.hom] = 1.0
        zs.append(z)
    return zs
