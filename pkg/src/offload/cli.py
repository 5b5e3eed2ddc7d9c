"""``offload`` command line: solve one instance, run sweeps, validate against the oracle.

Exit status: 0 on success, 1 for configuration / usage errors, 2 when a
solver stage fails.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import mumto, mumtoc, oracle, qcqp, sdp
from .alloc import CostTable, allocate
from .config import SWEEP_KEYS, Config, ConfigError, load
from .model import BoundKind, Decision, Instance, Mode

log = logging.getLogger("offload")

CSV_COLUMNS = ["sweep_param", "value", "seed", "method", "total_cost", "energy_cost",
               "delay_cost", "lower_bound", "runtime_ms", "decision_string"]
METHODS = ("mumto", "mumtoc", "oracle", "local", "cloud", "cloud-best", "random", "lb",
           "sdrc", "sdrc-ao", "sdrc-st", "ao-st", "st-random")


class StageFailure(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"{stage} failed: {exc}")


def _ablation(instance: Instance, name: str, seed: int):
    """Recombinations of the MUMTO-C steps."""
    table = CostTable.of(instance)
    if name.startswith("sdrc"):
        problem = qcqp.build(instance, BoundKind.UPPER)
        sol = sdp.solve(problem)
        if not sol.ok:
            raise RuntimeError(f"SDR-C status {sol.status.value}")
        start = mumtoc.recover_decision_cap(sol, problem.layouts)
    else:
        start = oracle.random_decision(instance, seed)
    alloc, cost = allocate(instance, start, table)
    state = (start, alloc)
    if name in ("sdrc-ao", "ao-st"):
        ao = mumtoc.step_ao(instance, state, table)
        state, cost = (ao.decision, ao.allocation), ao.cost
    if name in ("sdrc-st", "ao-st", "st-random"):
        st = mumtoc.step_st(instance, state, seed, table)
        state, cost = (st.decision, st.allocation), st.cost
    return state[0], cost


def run_method(instance: Instance, method: str, seed: int) -> dict:
    """One CSV-shaped record; the lower bound column is filled by the caller."""
    t0 = time.perf_counter()
    energy = delay = total = None
    decision: Decision | None = None
    try:
        if method == "mumto":
            r = mumto.run(instance.with_mode(Mode.NO_CAP))
            decision, cost = r.decision, r.cost
        elif method == "mumtoc":
            _need_cap(instance, method)
            r = mumtoc.run(instance, seed)
            decision, cost = r.decision, r.cost
        elif method == "oracle":
            r = oracle.exhaustive(instance, BoundKind.UPPER)
            decision, cost = r.decision, r.cost
        elif method in ("local", "cloud", "random"):
            r = oracle.baseline(instance, method, seed)
            decision, cost = r.decision, r.cost
        elif method == "cloud-best":
            r = oracle.baseline(instance, "cloud", seed)
            decision, cost = r.decision, r.cost_best_case
        elif method == "lb":
            total = lower_bound(instance)
            cost = None
        else:
            _need_cap(instance, method)
            decision, cost = _ablation(instance, method, seed)
    except (ConfigError, oracle.SpaceTooLarge):
        raise
    except Exception as exc:  # any numerical failure names its stage
        raise StageFailure(method, exc) from exc
    if cost is not None:
        energy, delay, total = cost.energy_and_usage, cost.delay_cost, cost.total
    return {
        "method": method,
        "total_cost": total,
        "energy_cost": energy,
        "delay_cost": delay,
        "runtime_ms": 1e3 * (time.perf_counter() - t0),
        "decision_string": decision.to_string() if decision is not None else "",
    }


def _need_cap(instance: Instance, method: str) -> None:
    if instance.mode is not Mode.WITH_CAP:
        raise ConfigError(f"method {method!r} needs mode = cap")


def lower_bound(instance: Instance) -> float:
    if instance.mode is Mode.WITH_CAP:
        return mumtoc.lower_bound_cap(instance)
    return mumto.lower_bound(instance)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _realization(job):
    """Worker: every requested method on one (value, seed) realization."""
    cfg, key, value, seed, methods = job
    instance = cfg.instance(seed)
    rows = [run_method(instance, m, seed) for m in methods if m != "lb"]
    lb = None
    if "lb" in methods:
        lb_row = run_method(instance, "lb", seed)
        lb = lb_row["total_cost"]
        rows.insert(methods.index("lb"), lb_row)
    for row in rows:
        row.update(sweep_param=key, value=value, seed=seed, lower_bound=lb)
    return rows


def _workers() -> int:
    env = os.environ.get("OFFLOAD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OFFLOAD_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _map(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        yield from map(_realization, jobs)
        return
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        yield from pool.map(_realization, jobs)


def _open_csv(path):
    """Append-safe writer: the header is written only to a new or empty file."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    fh = open(path, "a", newline="", encoding="utf-8")
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
    if new:
        writer.writeheader()
    return fh, writer


def _parse_sweep(spec: str) -> tuple[str, list[float]]:
    if "=" not in spec:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {spec!r}")
    key, values = spec.split("=", 1)
    key = key.strip()
    if key not in SWEEP_KEYS:
        raise ConfigError(f"unknown sweep parameter {key!r}; choose from {', '.join(SWEEP_KEYS)}")
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--sweep values must be numbers: {values!r}") from None
    if not vals:
        raise ConfigError("--sweep needs at least one value")
    return key, vals


def _config(args) -> Config:
    cfg = load(args.config) if args.config else Config()
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=Mode(args.mode))
    return cfg


def cmd_solve(args) -> int:
    cfg = _config(args)
    methods = args.method or ["mumtoc" if cfg.mode is Mode.WITH_CAP else "mumto"]
    instance = cfg.instance()
    lb = lower_bound(instance) if set(methods) & {"mumto", "mumtoc", "lb"} else None
    rows = []
    for m in methods:
        row = run_method(instance, m, cfg.seed)
        row.update(sweep_param="", value="", seed=cfg.seed, lower_bound=lb)
        rows.append(row)
    print(f"instance: {instance.n_users} users, {instance.n_tasks} tasks, mode={instance.mode.value}")
    if lb is not None:
        print(f"lower bound            {lb:.6f} J")
    for row in rows:
        if row["method"] == "lb":
            continue
        print(f"{row['method']:<22} total {row['total_cost']:.6f} J  "
              f"(energy+usage {row['energy_cost']:.6f}, delay {row['delay_cost']:.6f})  "
              f"{row['runtime_ms']:.1f} ms")
        print(f"{'':<22} decision {row['decision_string']}")
        if lb is not None and row["method"] in ("mumto", "mumtoc"):
            print(f"{'':<22} sandwich {lb:.6f} <= {row['total_cost']:.6f}  "
                  f"(gap to bound {row['total_cost'] / lb - 1:.4%})")
        if args.verbose and row["decision_string"]:
            inst = instance if row["method"] != "mumto" else instance.with_mode(Mode.NO_CAP)
            alloc, _ = allocate(inst, Decision.from_string(row["decision_string"]))
            for i in range(inst.n_users):
                extra = f"  f_a {alloc.f_a[i]:.6g} cycles/s" if alloc.f_a else ""
                print(f"{'':<22} user {i}: c_u {alloc.c_u[i]:.6g} Hz  c_d {alloc.c_d[i]:.6g} Hz{extra}")
    if args.out:
        fh, writer = _open_csv(args.out)
        with fh:
            for row in rows:
                writer.writerow({k: _fmt(row.get(k)) for k in CSV_COLUMNS})
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    key, values = _parse_sweep(args.sweep)
    methods = args.method or ["mumtoc" if cfg.mode is Mode.WITH_CAP else "mumto", "local", "cloud", "lb"]
    configs = [cfg.with_value(key, v) for v in values]
    if cfg.mode is Mode.NO_CAP and {"mumtoc", "sdrc", "sdrc-ao", "sdrc-st", "ao-st", "st-random"} & set(methods):
        raise ConfigError("MUMTO-C methods need mode = cap")
    jobs = [(c, key, v, cfg.seed + s, methods) for c, v in zip(configs, values) for s in range(args.seeds)]
    if not args.out:
        raise ConfigError("sweep needs --out FILE")
    fh, writer = _open_csv(args.out)
    n = 0
    with fh:
        for rows in _map(jobs, _workers()):
            for row in rows:
                writer.writerow({k: _fmt(row.get(k)) for k in CSV_COLUMNS})
                n += 1
            fh.flush()
    print(f"wrote {n} rows to {args.out}")
    return 0


def validate(cfg: Config, n_users: int, m_tasks: int, seeds: int, mode: Mode) -> dict:
    """Gap of MUMTO / MUMTO-C versus the oracle plus the sandwich and audit counts."""
    cfg = replace(cfg, n_users=n_users, m_tasks=m_tasks, mode=mode, users=None)
    probe = cfg.instance(cfg.seed)
    if oracle.space_size(probe) > oracle.SPACE_GUARD:
        k = 2 if mode is Mode.NO_CAP else 3
        raise oracle.SpaceTooLarge(
            f"{k}^{probe.n_tasks} decisions exceed the oracle guard; try n_users*m_tasks <= "
            f"{int(np.log(oracle.SPACE_GUARD) / np.log(k))}, e.g. --n-users 2 --m-tasks 2")
    gaps, sandwich, audit = [], 0, 0
    for s in range(seeds):
        inst = cfg.instance(cfg.seed + s)
        worst = oracle.exhaustive(inst, BoundKind.UPPER).total
        best = oracle.exhaustive(inst, BoundKind.LOWER).total
        if mode is Mode.NO_CAP:
            cost = mumto.run(inst).cost.total
            lb = mumto.lower_bound(inst)
        else:
            r = mumtoc.run(inst, cfg.seed + s)
            cost = r.cost.total
            lb = mumtoc.lower_bound_cap(inst)
            audit += bool(mumtoc.single_move_audit(inst, r.decision))
        slack = 1e-9
        if not (lb <= best * (1 + slack) and best <= worst * (1 + slack) and worst <= cost * (1 + slack)):
            sandwich += 1
        gaps.append(cost / worst - 1)
    return {"seeds": seeds, "mean_gap": float(np.mean(gaps)), "max_gap": float(np.max(gaps)),
            "sandwich_violations": sandwich, "audit_failures": audit}


def cmd_validate(args) -> int:
    cfg = _config(args)
    mode = Mode(args.mode) if args.mode else cfg.mode
    rep = validate(cfg, args.n_users, args.m_tasks, args.seeds, mode)
    name = "MUMTO" if mode is Mode.NO_CAP else "MUMTO-C"
    print(f"{name} vs oracle over {rep['seeds']} seeds (N={args.n_users}, M={args.m_tasks}, mode={mode.value})")
    print(f"mean gap             {rep['mean_gap']:.4g}")
    print(f"max gap              {rep['max_gap']:.4g}")
    print(f"sandwich violations  {rep['sandwich_violations']}")
    if mode is Mode.WITH_CAP:
        print(f"audit failures       {rep['audit_failures']}")
    return 0 if rep["sandwich_violations"] == 0 and rep["audit_failures"] == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offload", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key/value config file")
        p.add_argument("--mode", choices=[m.value for m in Mode])

    p = sub.add_parser("solve", help="run methods on one instance")
    common(p)
    p.add_argument("--method", action="append", choices=METHODS)
    p.add_argument("--out", help="append CSV rows to this file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep one parameter over seeded realizations")
    common(p)
    p.add_argument("--method", action="append", choices=METHODS)
    p.add_argument("--sweep", required=True, help="key=v1,v2,...")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="compare against the exhaustive oracle")
    common(p)
    p.add_argument("--n-users", type=int, default=2)
    p.add_argument("--m-tasks", type=int, default=2)
    p.add_argument("--seeds", type=int, default=50)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "verbose"):
        args.verbose = False
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except oracle.SpaceTooLarge as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"solver failure in stage {exc.stage!r}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
