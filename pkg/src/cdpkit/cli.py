"""Command-line entry point: validate manifolds, solve single instances,
probe penalty-theory properties, and run benchmark grids.

Exit codes: 0 ok, 1 check or convergence failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, diagnostics, dissolve, manifolds, solver
from .core import (
    CdpkitError,
    ConfigurationError,
    MultiplierSet,
    PenaltyParams,
    default_fd_step,
    finite_diff_check,
    load_problem,
    validate_manifold,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _emit(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, default=_jsonable))
    else:
        for key, val in payload.items():
            print(f"{key}: {val}")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def _make_family_handle(args):
    family = args.family
    if family == "oblique":
        return manifolds.make_handle("oblique", m=args.m, q=args.q)
    if family == "sphere":
        return manifolds.make_handle("sphere", n=args.n or args.m)
    if family == "symplectic_stiefel":
        return manifolds.make_handle("symplectic_stiefel", m=args.m, q=args.q)
    raise ConfigurationError("family", f"{family!r} not usable from the CLI "
                             "(custom constraint maps are programmatic only)")


def _feasible_probes(handle, count: int, seed: int):
    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(count):
        y = rng.standard_normal(handle.n) * 0.1
        base = _canonical_point(handle)
        probes.append(base + y)
    return probes


def _canonical_point(handle):
    if handle.name.startswith("oblique"):
        m, q = handle.shape
        X = np.zeros((m, q))
        X[:, 0] = 1.0
        return X.ravel()
    if handle.name.startswith("sphere"):
        x = np.zeros(handle.n)
        x[0] = 1.0
        return x
    if handle.name.startswith("symplectic"):
        m, q = handle.shape
        return manifolds.symplectic_canonical_point(m, q).ravel()
    raise ConfigurationError("family", f"no canonical point for {handle.name}")


def cmd_validate(args) -> int:
    handle = _make_family_handle(args)
    probes = _feasible_probes(handle, args.probes, args.seed)
    report = validate_manifold(handle, probes, tol=args.tol)

    base = dissolve.a_infinity(handle, _canonical_point(handle))
    fd_err = finite_diff_check(
        handle.eval_c, handle.apply_JcT, base + 0.05, default_fd_step(base))
    slope = _decrease_slope(handle, base, args.seed)
    payload = {
        "family": handle.name,
        "max_fixed_point_error": report.max_fixed_point_error,
        "max_jacobian_product_norm": report.max_jacobian_product_norm,
        "probes_used": report.probes_used,
        "constraint_fd_error": fd_err,
        "quadratic_decrease_slope": slope,
        "passed": report.passed and fd_err <= 1e-5 and 1.85 <= slope <= 2.15,
    }
    _emit(args, payload)
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def _decrease_slope(handle, base, seed: int):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(handle.n)
    w /= np.linalg.norm(w)
    logs_y, logs_ay = [], []
    for t in (1e-1, 1e-2, 1e-3, 1e-4):
        y = base + t * w
        cy = np.linalg.norm(handle.eval_c(y))
        cay = np.linalg.norm(handle.eval_c(handle.eval_A(y)))
        if cy > 0 and cay > 0:
            logs_y.append(np.log(cy))
            logs_ay.append(np.log(cay))
    slope, _ = np.polyfit(logs_y, logs_ay, 1)
    return float(slope)


def _load_from_args(args):
    if args.config:
        return load_problem(Path(args.config))
    doc = {"family": args.family, "seed": args.seed}
    for key in ("m", "q", "n_samples", "r", "rho"):
        val = getattr(args, key.replace("n_samples", "N"), None) \
            if key == "n_samples" else getattr(args, key, None)
        if val is not None:
            doc["N" if key == "n_samples" else key] = val
    return load_problem(doc)


def _default_instance(problem, args):
    beta = args.beta if args.beta is not None else (
        0.1 if problem.name.startswith("balanced_cut") else 1.0)
    tau = np.full(problem.n_eq, args.tau) if args.tau else np.zeros(problem.n_eq)
    gamma = np.full(problem.n_ineq, args.gamma) if args.gamma else np.zeros(problem.n_ineq)
    return dissolve.build_cdp(problem, PenaltyParams(beta, tau, gamma))


def _initial_point(problem, args):
    from . import bench as _b

    if problem.name.startswith("center_of_mass"):
        cfg = _cfg_from_name(problem.name, _b.CenterOfMassConfig)
        return _b.gen_center_of_mass(cfg)[1]
    cfg = _cfg_from_name(problem.name, _b.BalancedCutConfig)
    return _b.gen_balanced_cut(cfg)[1]


def _cfg_from_name(name, cls):
    inner = name[name.index("(") + 1:-1]
    kwargs = {}
    for part in inner.split(","):
        key, val = part.split("=")
        kwargs[key] = float(val) if "." in val else int(val)
    return cls(**kwargs)


def cmd_solve(args) -> int:
    problem = _load_from_args(args)
    x0 = _initial_point(problem, args)
    opts = solver.AlmOptions(time_budget=args.budget)
    if args.pipeline == "cdp":
        res = solver.alm_solve_cdp(_default_instance(problem, args), x0, opts)
    else:
        res = solver.alm_solve_nlp_direct(problem, x0, opts)
    payload = {
        "Function value": res.objective,
        "Substationarity": res.kkt.stationarity,
        "Feasibility": res.kkt.feasibility,
        "CPU time (s)": res.wall_time,
        "status": res.status,
    }
    _emit(args, payload)
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            rows = res.trace.to_csv_rows()
            writer = _csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else
                                     ["iter", "f", "feas", "stat", "beta",
                                      "sigma", "time"])
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK if res.status == "converged" else EXIT_FAIL


def cmd_probe(args) -> int:
    problem = _load_from_args(args)
    x0 = _initial_point(problem, args)
    x_ref = dissolve.a_infinity(problem.manifold, x0)
    est = diagnostics.estimate_constants(problem, x_ref, radius=0.05,
                                         samples=args.probes, seed=args.seed)
    instance = _default_instance(problem, args)
    cond = diagnostics.check_condition(est, instance.params)
    slope = _decrease_slope(problem.manifold, x_ref, args.seed)
    mult = MultiplierSet(lam=np.zeros(problem.n_eq),
                         mu=np.zeros(problem.n_ineq))
    probe = dissolve.lagrangian_decrease_probe(
        instance, x_ref, mult, offsets=[1e-2, 1e-3], seed=args.seed)
    payload = {
        "sigma1x": est.sigma1x,
        "epsilon_x": est.epsilon_x,
        "beta": instance.params.beta,
        "beta_threshold": cond.beta_threshold,
        "beta_met": cond.beta_met,
        "quadratic_decrease_slope": slope,
        "decrease_condition_met": probe.condition_met,
        "decrease_passed": probe.passed,
    }
    _emit(args, payload)
    hard_ok = 1.85 <= slope <= 2.15 and (probe.passed or not probe.condition_met)
    return EXIT_OK if hard_ok else EXIT_FAIL


def cmd_bench(args) -> int:
    grid_path = Path(args.grid)
    if not grid_path.is_file():
        print(f"grid file not found: {grid_path}", file=sys.stderr)
        return EXIT_USAGE
    import yaml

    doc = yaml.safe_load(grid_path.read_text())
    grid = []
    for entry in doc:
        family = entry.pop("family")
        if family == "center_of_mass":
            grid.append(bench.CenterOfMassConfig(**entry))
        elif family == "balanced_cut":
            grid.append(bench.BalancedCutConfig(**entry))
        else:
            print(f"unknown family {family!r} in grid", file=sys.stderr)
            return EXIT_USAGE
    records = bench.run_experiment(grid, budget=args.budget)
    csv_text = bench.records_to_csv(records)
    if args.out:
        Path(args.out).write_text(csv_text)
        Path(args.out).with_suffix(".md").write_text(
            bench.records_to_markdown(records))
    else:
        print(csv_text)
        print(bench.records_to_markdown(records))
    return EXIT_OK


def _add_common(p):
    p.add_argument("--family", choices=["oblique", "sphere",
                                        "symplectic_stiefel", "generic",
                                        "center_of_mass", "balanced_cut"])
    p.add_argument("--m", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--N", type=int, dest="N")
    p.add_argument("--r", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.add_argument("--probes", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdpkit",
        description="constraint dissolving toolkit for manifold-constrained "
                    "nonlinear programs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check dissolving-map axioms")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_solve = sub.add_parser("solve", help="solve one instance")
    _add_common(p_solve)
    p_solve.add_argument("--pipeline", choices=["cdp", "nlp"], default="cdp")
    p_solve.add_argument("--budget", type=float, default=1200.0)
    p_solve.add_argument("--out")
    p_solve.set_defaults(func=cmd_solve)

    p_probe = sub.add_parser("probe", help="probe penalty-theory properties")
    _add_common(p_probe)
    p_probe.set_defaults(func=cmd_probe)

    p_bench = sub.add_parser("bench", help="run a benchmark grid")
    _add_common(p_bench)
    p_bench.add_argument("--grid", required=True)
    p_bench.add_argument("--budget", type=float, default=1200.0)
    p_bench.add_argument("--out")
    p_bench.add_argument("--workers", type=int,
                         default=int(os.environ.get("CDPKIT_THREADS", "1")))
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CdpkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
