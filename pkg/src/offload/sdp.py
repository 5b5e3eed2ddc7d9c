"""Semidefinite relaxation of a :class:`~offload.qcqp.SeparableQcqp`.

Each user's rank-one z_i z_i' is replaced by a PSD block Z_i with Z_i[hom, hom] = 1.
The resulting conic program is handed to Clarabel, which is an interior-point
solver with a native PSD cone. Blocks enter the solver as scaled
upper-triangle vectors (svec), so <G, Z> = svec(G) . svec(Z).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

from .qcqp import SeparableQcqp

MAX_ITER = 500
SQRT2 = np.sqrt(2.0)


class SdpStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class SolverFailure(RuntimeError):
    """Raised by callers that need an optimal relaxation and did not get one."""


@dataclass(frozen=True)
class SdpSolution:
    blocks: tuple[np.ndarray, ...]
    objective: float  # sum_i <G_i, Z_i>, without the constant offset
    offset: float
    status: SdpStatus
    gap: float  # relative primal-dual gap reported by the solver
    min_eig: float  # smallest scaled eigenvalue over all blocks
    max_residual: float  # largest scaled constraint violation
    iterations: int
    dual_objective: float = float("nan")  # solver's dual value, without the offset

    @property
    def value(self) -> float:
        """Relaxed objective including the constant offset."""
        return self.objective + self.offset

    @property
    def bound(self) -> float:
        """Lower bound on the QCQP optimum: the smaller of the primal and dual values.

        A slightly infeasible primal point can sit a hair above the optimum;
        the dual value does not have that problem.
        """
        return min(self.objective, self.dual_objective) + self.offset

    @property
    def ok(self) -> bool:
        return self.status is SdpStatus.OPTIMAL

    def last_row(self, i: int) -> np.ndarray:
        return self.blocks[i][-1]


def _triu_order(n: int):
    """Row/col indices of the upper triangle, column-major (Clarabel's svec order)."""
    rows, cols = [], []
    for c in range(n):
        for r in range(c + 1):
            rows.append(r)
            cols.append(c)
    return np.array(rows), np.array(cols)


def svec(M: np.ndarray) -> np.ndarray:
    r, c = _triu_order(M.shape[0])
    return M[r, c] * np.where(r == c, 1.0, SQRT2)


def smat(v: np.ndarray, n: int) -> np.ndarray:
    r, c = _triu_order(n)
    vals = v / np.where(r == c, 1.0, SQRT2)
    M = np.zeros((n, n))
    M[r, c] = vals
    M[c, r] = vals
    return M


def scaled_min_eig(Z: np.ndarray) -> float:
    """Smallest eigenvalue relative to the block's largest diagonal entry (at least 1)."""
    return float(np.linalg.eigvalsh(Z)[0]) / max(1.0, float(np.max(np.diag(Z))))


def _residual(value: float, sense: str, rhs: float) -> float:
    excess = value - rhs if sense == "<=" else abs(value - rhs)
    return max(excess, 0.0) / max(1.0, abs(rhs))


def residuals(problem: SeparableQcqp, blocks) -> np.ndarray:
    """Scaled violations of every relaxed row, hom = 1 and nonnegativity included."""
    out = []
    for Z, rows, nn in zip(blocks, problem.constraints, problem.nonneg):
        for c in rows:
            out.append(_residual(float(np.sum(c.matrix * Z)), c.sense, c.rhs))
        out.append(abs(Z[-1, -1] - 1.0))
        out.extend(np.maximum(-Z[-1, nn], 0.0))
    for c in problem.coupling:
        value = sum(float(np.sum(A * Z)) for A, Z in zip(c.matrices, blocks))
        out.append(_residual(value, c.sense, c.rhs))
    return np.asarray(out)


# Clarabel setting variants, tried in order. A tiny static regularisation
# gives the most accurate points when objective coefficients span many
# decades; switching equilibration off rescues most of the rest.
VARIANTS = (
    {"static_regularization_constant": 1e-12},
    {"equilibrate_enable": False},
)


def _conic_data(problem: SeparableQcqp):
    """(q, A, b, cones, starts, dims) in Clarabel's form, one PSD cone per user."""
    dims = [L.dim for L in problem.layouts]
    sizes = [n * (n + 1) // 2 for n in dims]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    n_var = int(starts[-1])

    eq_rows, eq_rhs, in_rows, in_rhs = [], [], [], []

    def put(sense, parts, rhs):
        row = np.zeros(n_var)
        for i, M in parts:
            row[starts[i]:starts[i + 1]] += svec(M)
        (eq_rows if sense == "==" else in_rows).append(row)
        (eq_rhs if sense == "==" else in_rhs).append(rhs)

    for i, (L, rows, nn) in enumerate(zip(problem.layouts, problem.constraints, problem.nonneg)):
        for c in rows:
            put(c.sense, [(i, c.matrix)], c.rhs)
        E = np.zeros((L.dim, L.dim))
        E[-1, -1] = 1.0
        put("==", [(i, E)], 1.0)
        for k in np.flatnonzero(nn):
            E = np.zeros((L.dim, L.dim))
            E[k, -1] = E[-1, k] = -0.5
            put("<=", [(i, E)], 0.0)
    for c in problem.coupling:
        put(c.sense, list(enumerate(c.matrices)), c.rhs)

    q = np.concatenate([svec(G) for G in problem.objectives])
    A = sp.vstack([
        sp.csr_matrix(np.array(eq_rows)),
        sp.csr_matrix(np.array(in_rows)),
        -sp.identity(n_var, format="csr"),
    ]).tocsc()
    b = np.concatenate([eq_rhs, in_rhs, np.zeros(n_var)])
    cones = [clarabel.ZeroConeT(len(eq_rows)), clarabel.NonnegativeConeT(len(in_rows))]
    cones += [clarabel.PSDTriangleConeT(n) for n in dims]
    return q, A, b, cones, starts, dims


def _solve_once(problem, data, tol, max_iter, variant) -> SdpSolution:
    q, A, b, cones, starts, dims = data
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    # Loose feasibility lets the reported value creep above the true optimum
    # by residual * |Z|, and |Z| reaches ~1e4 here, so stay tight.
    settings.tol_gap_rel = min(tol, 1e-10)
    settings.tol_gap_abs = min(tol, 1e-10)
    settings.tol_feas = 1e-14
    settings.tol_ktratio = 1e-8
    settings.presolve_enable = False
    settings.chordal_decomposition_enable = False
    for key, value in variant.items():
        setattr(settings, key, value)
    P = sp.csc_matrix((len(q), len(q)))
    result = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()

    x = np.asarray(result.x)
    blocks = tuple(smat(x[starts[i]:starts[i + 1]], n) for i, n in enumerate(dims))
    objective = float(q @ x)
    dual = float(result.obj_val_dual)
    gap = abs(objective - dual) / max(1.0, abs(objective))
    min_eig = min(scaled_min_eig(Z) for Z in blocks)
    res = residuals(problem, blocks)
    max_res = float(res.max()) if res.size else 0.0

    name = str(result.status).split(".")[-1]
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = SdpStatus.INFEASIBLE
    elif name in ("Solved", "AlmostSolved") and gap <= tol and max_res <= 1e-6 and min_eig >= -1e-8:
        status = SdpStatus.OPTIMAL
    else:
        status = SdpStatus.MAX_ITER
    return SdpSolution(blocks, objective, problem.offset, status, gap, min_eig, max_res,
                       int(result.iterations), dual)


def solve(problem: SeparableQcqp, tol: float = 1e-6, max_iter: int = MAX_ITER,
          refine: bool = False) -> SdpSolution:
    """Solve the relaxation with one PSD cone per user.

    The first setting variant that reaches OPTIMAL wins. With ``refine`` every
    variant runs and the lowest optimal value is kept; both points are feasible,
    so the lower one is the better estimate. Lower bounds use this because an
    early stop errs upwards.
    """
    data = _conic_data(problem)
    first = best = None
    for variant in VARIANTS:
        sol = _solve_once(problem, data, tol, max_iter, variant)
        first = first or sol
        if sol.ok and (best is None or sol.objective < best.objective):
            best = sol
        if best is not None and not refine:
            break
    return best or first
