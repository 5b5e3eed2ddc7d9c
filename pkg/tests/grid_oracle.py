"""Brute-force allocation oracle for two users, independent of the barrier solver.

Given a decision, a user's offload delay is
    W(c_u, c_d) + max(K, Y / f_a),   W = U / c_u + D / c_d
(U, D in Hz*s). For a fixed per-user bandwidth B = c_u + c_d the split that
minimises W is c_u = B * sqrt(U) / (sqrt(U) + sqrt(D)), giving
W = (sqrt(U) + sqrt(D))**2 / B. This holds when the uplink and downlink caps
do not bind, which is the case at c_ul = c_dl = c_total. What remains is a
grid over user 0's share of the bandwidth and of the CAP rate.
"""
import numpy as np

from offload.model import Placement


def _user_terms(instance, decision, i):
    user = instance.users[i]
    p = instance.params
    row = decision.placement[i]
    U = sum(t.d_in / user.eta_u for t, w in zip(user.tasks, row) if w is not Placement.LOCAL)
    D = sum(t.d_out / user.eta_d for t, w in zip(user.tasks, row) if w is not Placement.LOCAL)
    K = sum((t.d_in + t.d_out) / p.r_ac + t.cycles / p.f_c
            for t, w in zip(user.tasks, row) if w is Placement.CLOUD)
    Y = sum(t.cycles for t, w in zip(user.tasks, row) if w is Placement.CAP)
    TL = sum(user.device.local_time_per_bit * t.d_in for t, w in zip(user.tasks, row) if w is Placement.LOCAL)
    return U, D, K, Y, TL


def _delay(U, D, K, Y, TL, B, F):
    if U == 0 and D == 0:
        return np.full(np.broadcast(B, F).shape, TL)
    with np.errstate(divide="ignore", invalid="ignore"):
        W = (np.sqrt(U) + np.sqrt(D)) ** 2 / B
        cap = np.where(Y > 0, Y / F, 0.0)
    return np.maximum(TL, W + np.maximum(K, cap))


def grid_cost(instance, decision, n=200):
    """Minimum worst-case delay cost over a share grid (energy excluded; it does not depend on c)."""
    assert instance.n_users == 2
    p = instance.params
    C = min(p.c_total, p.c_ul + p.c_dl)
    Fa = p.f_a_total
    terms = [_user_terms(instance, decision, i) for i in range(2)]
    rho = [u.rho for u in instance.users]
    off = [t[0] > 0 for t in terms]
    cap = [t[3] > 0 for t in terms]
    # shares on an open grid so every share is positive
    s = (np.arange(n) + 0.5) / n
    b0 = s if all(off) else np.array([1.0 if off[0] else 0.0])
    f0 = s if all(cap) else np.array([1.0 if cap[0] else 0.0])
    B0, F0 = np.meshgrid(b0, f0, indexing="ij")
    d0 = _delay(*terms[0], B0 * C, F0 * Fa)
    d1 = _delay(*terms[1], (1 - B0) * C, (1 - F0) * Fa)
    return float(np.min(rho[0] * d0 + rho[1] * d1))
