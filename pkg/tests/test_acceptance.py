"""The acceptance criteria, each checked at its stated tolerance.

Every test records a PASS/FAIL line (shown in the terminal summary) and then
asserts, so a failing criterion stays red.
"""
import csv
import time
from collections import defaultdict
from dataclasses import replace

import numpy as np
import pytest

from offload import cli, costs, mumto, mumtoc, qcqp, sdp
from offload.alloc import allocate
from offload.model import BoundKind, Decision, Mode, Placement, default_params, generate_instance
from offload.oracle import exhaustive, random_decision

from acceptance_report import record
from grid_oracle import grid_cost
from test_qcqp import random_feasible_alloc

pytestmark = pytest.mark.slow

N, M = 5, 4
BETAS = (2.5e-7, 1e-6, 5e-6, 1e-5, 1e-4)
REALIZATIONS = 100
SLACK = 1e-9  # solver accuracy allowance on the bound side of the sandwich


def _instance(seed, mode=Mode.NO_CAP, n=N, m=M, **changes):
    params, device = default_params()
    return generate_instance(replace(params, **changes), device, n, m, seed=seed, mode=mode)


def test_1_qcqp_exactness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for mode in Mode:
        for k in range(200):
            inst = _instance(k, mode, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            dec = random_decision(inst, k)
            alloc = random_feasible_alloc(inst, rng)
            if dec.offloaded and any(
                    dec.offloaded(i) and (alloc.c_u[i] == 0 or alloc.c_d[i] == 0) for i in range(inst.n_users)):
                continue
            bound = BoundKind.UPPER if k % 2 == 0 else BoundKind.LOWER
            prob = qcqp.build(inst, bound)
            ref = costs.total_cost(inst, dec, alloc, bound).total
            val = prob.objective(qcqp.lift(prob, inst, dec, alloc))
            worst = max(worst, abs(val - ref) / ref)
            count += 1
    elapsed = time.perf_counter() - t0
    ok = record(1, count == 400 and worst <= 1e-9 and elapsed < 10,
                f"{count} triples, max rel error {worst:.2e} (<= 1e-9), {elapsed:.1f} s (< 10 s)")
    assert ok


def _sandwich(mode, run, bound):
    t0 = time.perf_counter()
    gaps, violations = [], 0
    for seed in range(50):
        inst = _instance(seed, mode, 2, 2)
        lb = bound(inst)
        best = exhaustive(inst, BoundKind.LOWER).total
        worst = exhaustive(inst, BoundKind.UPPER).total
        cost = run(inst, seed)
        if not (lb <= best * (1 + SLACK) and best <= worst * (1 + SLACK) and worst <= cost * (1 + SLACK)):
            violations += 1
        gaps.append(cost / worst - 1)
    return violations, float(np.mean(gaps)), float(np.max(gaps)), time.perf_counter() - t0


def test_2_sandwich_nocap():
    v, mean, mx, elapsed = _sandwich(Mode.NO_CAP, lambda i, s: mumto.run(i).cost.total, mumto.lower_bound)
    ok = record(2, v == 0 and mean <= 0.05 and mx <= 0.15 and elapsed < 120,
                f"violations {v}, mean gap {mean:.3%} (<= 5%), max gap {mx:.3%} (<= 15%), {elapsed:.0f} s")
    assert ok


def test_3_sandwich_cap():
    v, mean, mx, elapsed = _sandwich(Mode.WITH_CAP, lambda i, s: mumtoc.run(i, s).cost.total,
                                     mumtoc.lower_bound_cap)
    ok = record(3, v == 0 and mean <= 0.05 and elapsed < 300,
                f"violations {v}, mean gap {mean:.3%} (<= 5%), max gap {mx:.3%}, {elapsed:.0f} s")
    assert ok


@pytest.fixture(scope="module")
def cap_runs():
    out = []
    for seed in range(REALIZATIONS):
        inst = _instance(seed, Mode.WITH_CAP)
        out.append((inst, mumtoc.run(inst, seed)))
    return out


def test_4_step_monotonicity(cap_runs):
    bad = sum(not (r.j_st <= r.j_ao <= r.j_sdr) for _, r in cap_runs)
    placed = sum(r.decision.count(Placement.CAP) > 0 for _, r in cap_runs)
    ok = record(4, bad == 0, f"{bad} violations of j_st <= j_ao <= j_sdr over {len(cap_runs)} seeds "
                             f"({placed} runs place tasks at the CAP)")
    assert ok


def test_5_local_optimality_audit(cap_runs):
    bad = sum(bool(mumtoc.single_move_audit(inst, r.decision, 1e-6)) for inst, r in cap_runs)
    ok = record(5, bad == 0, f"{bad} of {len(cap_runs)} ST results admit a single move improving > 1e-6")
    assert ok


@pytest.fixture(scope="module")
def beta_sweep(tmp_path_factory):
    """The CLI sweep of criterion 11; its MUMTO-C rows also serve criterion 6."""
    out = tmp_path_factory.mktemp("sweep") / "beta.csv"
    t0 = time.perf_counter()
    rc = cli.main(["sweep", "--mode", "cap", "--sweep", "beta=" + ",".join(map(repr, BETAS)),
                   "--seeds", str(REALIZATIONS), "--method", "mumtoc", "--method", "local",
                   "--method", "cloud", "--method", "lb", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rc, rows, elapsed


def test_6_beta_trend(beta_sweep):
    mumto_mean, mumto_local = [], 0
    for beta in BETAS:
        totals = []
        for seed in range(REALIZATIONS):
            r = mumto.run(_instance(seed, beta=beta))
            totals.append(r.cost.total)
            if beta == BETAS[-1]:
                mumto_local += r.decision.count(Placement.CLOUD) == 0
        mumto_mean.append(np.mean(totals))

    _, rows, _ = beta_sweep
    by_beta = defaultdict(list)
    for row in rows:
        if row["method"] == "mumtoc":
            by_beta[float(row["value"])].append(row)
    cap_mean = [np.mean([float(r["total_cost"]) for r in by_beta[b]]) for b in BETAS]
    cap_no_cloud = sum("C" not in r["decision_string"] for r in by_beta[BETAS[-1]])
    n_cap = len(by_beta[BETAS[-1]])

    mono = all(np.diff(mumto_mean) >= 0) and all(np.diff(cap_mean) >= 0)
    frac = min(mumto_local / REALIZATIONS, cap_no_cloud / max(n_cap, 1))
    ok = record(6, mono and frac >= 0.95 and n_cap == REALIZATIONS,
                f"MUMTO means {', '.join(f'{x:.4g}' for x in mumto_mean)}; "
                f"MUMTO-C means {', '.join(f'{x:.4g}' for x in cap_mean)}; "
                f"all-Local {mumto_local}/{REALIZATIONS}, Local+Cap {cap_no_cloud}/{n_cap} at beta=1e-4")
    assert ok


def test_7_fc_trend():
    slow_match, fast_cost, fast_local = 0, [], []
    for seed in range(REALIZATIONS):
        inst = _instance(seed, f_c=1e8)
        local = costs.local_only_cost(inst)
        slow_match += abs(mumto.run(inst).cost.total - local) <= 0.01 * local
        inst = _instance(seed, f_c=1e11)
        fast_cost.append(mumto.run(inst).cost.total)
        fast_local.append(costs.local_only_cost(inst))
    ratio = np.mean(fast_cost) / np.mean(fast_local)
    part1 = slow_match / REALIZATIONS >= 0.95
    part2 = ratio <= 0.9
    ok = record(7, part1 and part2,
                f"f_c=1e8: {slow_match}/{REALIZATIONS} within 1% of local-only (>= 95%) "
                f"[{'ok' if part1 else 'fail'}]; f_c=1e11: mean cost / local-only mean = {ratio:.4f} "
                f"(<= 0.9) [{'ok' if part2 else 'fail'}]")
    assert ok


def test_8_alpha_trend():
    worst = 0.0
    for seed in range(50):
        inst = _instance(seed, Mode.WITH_CAP, alpha=1e-4)
        cap = mumtoc.lower_bound_cap(inst)
        nocap = mumto.lower_bound(inst.with_mode(Mode.NO_CAP))
        worst = max(worst, abs(cap - nocap) / nocap)
    ok = record(8, worst <= 1e-3, f"max |lb_cap - lb_nocap| / lb_nocap = {worst:.2e} over 50 seeds (<= 1e-3)")
    assert ok


def test_9_allocation_vs_grid():
    rng = np.random.default_rng(9)
    worst = 0.0
    for k in range(20):
        mode = Mode.WITH_CAP if k % 2 else Mode.NO_CAP
        inst = _instance(900 + k, mode, 2, int(rng.integers(1, 5)))
        dec = random_decision(inst, k)
        _, cost = allocate(inst, dec)
        grid = costs.energy_and_usage(inst, dec) + grid_cost(inst, dec)
        worst = max(worst, abs(cost.total - grid) / grid)
    ok = record(9, worst <= 1e-3, f"max relative difference to the 200x200 grid {worst:.2e} (<= 1e-3)")
    assert ok


def test_10_sdp_validity():
    worst_eig, worst_diag, worst_res, worst_gap, bad, solves = 0.0, 0.0, 0.0, 0.0, 0, 0
    for seed in range(10):
        for mode in Mode:
            for bound in BoundKind:
                prob = qcqp.build(_instance(seed, mode), bound)
                sol = sdp.solve(prob)
                solves += 1
                diag = max(abs(Z[-1, -1] - 1) for Z in sol.blocks)
                worst_eig = min(worst_eig, sol.min_eig)
                worst_diag = max(worst_diag, diag)
                worst_res = max(worst_res, sol.max_residual)
                worst_gap = max(worst_gap, sol.gap)
                bad += not (sol.status is sdp.SdpStatus.OPTIMAL and sol.min_eig >= -1e-8
                            and diag <= 1e-8 and sol.max_residual <= 1e-6 and sol.gap <= 1e-6)
    ok = record(10, bad == 0, f"{bad}/{solves} invalid; min eig {worst_eig:.1e}, |Z_hom - 1| {worst_diag:.1e}, "
                              f"residual {worst_res:.1e}, gap {worst_gap:.1e}")
    assert ok


def test_11_runtime(beta_sweep):
    t0 = time.perf_counter()
    mumtoc.run(_instance(0, Mode.WITH_CAP), 0)
    single = time.perf_counter() - t0
    rc, rows, elapsed = beta_sweep
    expected = len(BETAS) * REALIZATIONS * 4
    ok = record(11, single < 60 and rc == 0 and len(rows) == expected and elapsed < 1800,
                f"single MUMTO-C run {single:.2f} s (< 60 s); beta sweep {len(rows)}/{expected} rows "
                f"in {elapsed:.0f} s (< 1800 s)")
    assert ok
