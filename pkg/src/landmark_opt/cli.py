"""Command-line front end.

Exit codes: 0 ok, 1 input error, 2 infeasible, 3 non-convergence,
4 certification failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConvergenceError, InfeasibleScenarioError, ScenarioFormatError

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_CERT = 0, 1, 2, 3, 4
WORKERS_ENV = "LANDMARK_OPT_WORKERS"

logger = logging.getLogger("landmark_opt")


def resolve_workers(flag):
    """Worker count: the environment variable wins over ``--workers``."""
    env = os.environ.get(WORKERS_ENV)
    if env is not None and env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ScenarioFormatError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    else:
        n = flag if flag is not None else 1
    if n < 1:
        raise ScenarioFormatError("worker count must be at least 1")
    return n


def _csv_sibling(path):
    return Path(path).with_suffix(".csv")


def _solver_cfg(args, scenario):
    from .solver import SolverConfig

    return SolverConfig(
        kkt_tol=args.kkt_tol,
        starts=args.starts,
        rng_seed=scenario.seed if args.seed is None else args.seed,
        workers=args.workers,
    )


def _write_placement(args, placement, doc, algorithm, extra, csv_extra=()):
    from .io import PLACEMENT_HEADER, placement_doc, placement_rows, write_csv, write_json

    out = placement_doc(placement, doc, algorithm, extra)
    print(f"{algorithm}: max_cost={placement.max_cost:.6g} feasible={placement.feasible}")
    if args.out:
        write_json(args.out, out)
        write_csv(_csv_sibling(args.out), PLACEMENT_HEADER,
                  placement_rows(placement) + list(csv_extra))
    return out


# commands


def cmd_solve(args):
    from .io import load_scenario
    from .nlp import build_nlp
    from .solver import solve

    doc = load_scenario(args.scenario)
    rep = solve(build_nlp(doc.scenario), _solver_cfg(args, doc.scenario))
    minima = [{"objective": p.max_cost, "landmarks": p.landmarks} for p, _ in rep.distinct_local_minima]
    extra = {
        "kkt_residual": rep.kkt_residual,
        "wall_time": rep.wall_time,
        "starts": args.starts,
        "starts_converged": rep.starts_converged,
        "newton_iterations": rep.newton_iterations_total,
        "distinct_local_minima": minima,
    }
    rows = [{"kind": "local_minimum", "index": k, "value": m["objective"]}
            for k, m in enumerate(minima)]
    rows.append({"kind": "kkt_residual", "value": rep.kkt_residual})
    _write_placement(args, rep.best, doc, "ours", extra, rows)
    return EXIT_OK


def cmd_greedy(args):
    from .baselines import GreedyConfig, greedy_place
    from .io import load_scenario

    doc = load_scenario(args.scenario)
    t = time.perf_counter()
    p = greedy_place(doc.scenario, GreedyConfig(args.grid_spacing))
    extra = {"wall_time": time.perf_counter() - t, "evaluations": p.evaluations,
             "grid_spacing": args.grid_spacing}
    _write_placement(args, p, doc, "greedy", extra)
    return EXIT_OK


def cmd_evolve(args):
    from .baselines import EvoConfig, evolve_place
    from .io import load_scenario

    doc = load_scenario(args.scenario)
    cfg = EvoConfig(
        eval_budget=args.budget,
        rng_seed=doc.scenario.seed if args.seed is None else args.seed,
    )
    if args.generations:
        cfg.generations = args.generations
    t = time.perf_counter()
    p = evolve_place(doc.scenario, cfg)
    extra = {"wall_time": time.perf_counter() - t, "evaluations": p.evaluations,
             "generations": cfg.generations, "eval_budget": args.budget}
    _write_placement(args, p, doc, "evolutionary", extra)
    if not p.feasible:
        print("no feasible individual found within the budget", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_bench, write_bench
    from .io import BenchSpec, load_bench_spec

    spec = load_bench_spec(args.spec) if args.spec else BenchSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.starts is not None:
        spec.starts = args.starts
    if args.grid_spacing is not None:
        spec.grid_spacing = args.grid_spacing
    res = run_bench(spec, workers=args.workers)
    out = args.out or "bench_out"
    write_bench(res, out)
    print(Path(out, "summary.md").read_text())
    return EXIT_OK


def cmd_verify_theory(args):
    from .io import load_scenario, write_csv, write_json
    from .solver import SolverConfig
    from .theory import (certify_claim1, certify_claim2, certify_sandwich, check_corollary,
                         composition_audit, zeta_audit)

    doc = load_scenario(args.scenario)
    if doc.theory is None:
        raise ScenarioFormatError(f"{args.scenario}: theory checks need num_landmarks >= 1")
    params, model = doc.theory, doc.scenario.model
    seed = doc.scenario.seed if args.seed is None else args.seed
    flip = args.flip_bound
    reports = [
        certify_sandwich(params, model, args.draws, seed, flip),
        certify_claim1(params.eta, draws=args.claim_draws, seed=seed, flip=flip),
        certify_claim2(params, model, args.claim_draws, seed, flip),
        composition_audit(params, model, args.draws, seed),
    ]
    rows = [r.as_row() for r in reports]
    corollary = {"status": "skipped", "reason": "disabled"}
    if not args.skip_corollary:
        corollary = check_corollary(doc.scenario, params,
                                    SolverConfig(starts=args.starts, rng_seed=seed))
        ok = corollary["status"] != "violated"
        rows.append({
            "check": "corollary", "checked": int(corollary["status"] != "skipped"),
            "skipped": int(corollary["status"] == "skipped"), "violations": int(not ok),
            "worst_slack": (corollary["factor"] - corollary["ratio"]) / corollary["factor"]
            if "ratio" in corollary else float("nan"),
            "passed": ok,
        })
    audit = zeta_audit()
    violations = sum(r["violations"] for r in rows)
    unchecked = [r["check"] for r in rows if r["check"] != "corollary" and not r["checked"]]
    for r in rows:
        print(f"{r['check']:<12} checked={r['checked']:<6} violations={r['violations']} "
              f"worst_slack={r['worst_slack']:.3g}")
    if args.out:
        write_json(args.out, {
            "theory": params.as_dict(), "checks": rows, "corollary": corollary,
            "zeta_audit": audit, "details": {r.name: r.details for r in reports},
            "draws": args.draws, "claim_draws": args.claim_draws, "seed": seed,
        })
        write_csv(_csv_sibling(args.out),
                  ["check", "checked", "skipped", "violations", "worst_slack", "passed"], rows)
    if violations or unchecked:
        if unchecked:
            print(f"no configuration satisfied the preconditions of: {', '.join(unchecked)}",
                  file=sys.stderr)
        return EXIT_CERT
    return EXIT_OK


def cmd_simulate(args):
    from .io import load_mission, load_scenario, read_placement, write_csv
    from .nlp import Scenario, build_nlp
    from .simkit import DRIFT_SOURCES, drift_rows, mission_setpoints
    from .solver import solve

    doc = load_scenario(args.scenario)
    mdoc = load_mission(args.mission)
    base = doc.scenario
    sources = DRIFT_SOURCES if args.source == "all" else (args.source,)
    optimized = None
    if "optimized" in sources:
        if args.placement:
            optimized = read_placement(args.placement)
        else:
            X = mission_setpoints(mdoc.mission, mdoc.setpoint_spacing)
            sc = Scenario(X, base.M, base.r_min, base.r_max, base.model, base.fov, base.seed)
            optimized = solve(build_nlp(sc), _solver_cfg(args, sc)).best.landmarks
    first = mdoc.mission.rng_seed if args.seed is None else args.seed
    height = base.fov.landmark_height if base.fov is not None else 0.0
    rows = drift_rows(mdoc.mission, base.model, range(first, first + args.runs), sources,
                      optimized, base.M, base.r_min, height, args.workers)
    for src in sources:
        d = [r["drift_total_m"] for r in rows if r["mode"] == src]
        red = [r["reduction"] for r in rows if r["mode"] == src]
        print(f"{src:<10} median drift {np.median(d):.4f} m  median reduction {np.median(red):.3f}")
    if args.out:
        write_csv(args.out, ["seed", "mode", "drift_total_m", "drift_x", "drift_y", "drift_z",
                             "reduction"], rows)
    return EXIT_OK


def cmd_deriv_check(args):
    from .audit import run_all_audits
    from .io import write_csv

    seed = 0 if args.seed is None else args.seed
    results = run_all_audits(args.points, seed)
    rows = [r.as_row() for r in results]
    for r in results:
        mark = "ok" if r.passed else "FAIL"
        print(f"{r.name:<8} N={r.N:<3} M={r.M:<3} grad_err={r.grad_err:.2e} "
              f"hess_err={r.hess_err:.2e} {mark}")
    if args.out:
        write_csv(args.out, list(rows[0]), rows)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CERT


# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: from input)")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (overridden by ${WORKERS_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--starts", type=int, default=10, help="multi-start count")
    solver.add_argument("--kkt-tol", type=float, default=1e-6, help="KKT residual tolerance")

    p = argparse.ArgumentParser(prog="landmark-opt",
                                description="Landmark placement for bearing-only localization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common, solver], help="interior-point multi-start solve")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("greedy", parents=[common], help="grid greedy baseline")
    s.add_argument("scenario")
    s.add_argument("--grid-spacing", type=float, default=None, help="grid cell size in metres")
    s.set_defaults(func=cmd_greedy)

    s = sub.add_parser("evolve", parents=[common], help="evolution strategy baseline")
    s.add_argument("scenario")
    s.add_argument("--budget", type=int, default=None, help="objective evaluation budget")
    s.add_argument("--generations", type=int, default=None)
    s.set_defaults(func=cmd_evolve)

    s = sub.add_parser("bench", parents=[common], help="benchmark sweep")
    s.add_argument("spec", nargs="?", default=None, help="bench spec (default sweep if omitted)")
    s.add_argument("--starts", type=int, default=None)
    s.add_argument("--grid-spacing", type=float, default=None)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("verify-theory", parents=[common], help="randomized bound certification")
    s.add_argument("scenario")
    s.add_argument("--draws", type=int, default=1000)
    s.add_argument("--claim-draws", type=int, default=10_000)
    s.add_argument("--starts", type=int, default=5, help="starts for the corollary solve")
    s.add_argument("--skip-corollary", action="store_true")
    s.add_argument("--flip-bound", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_verify_theory)

    s = sub.add_parser("simulate", parents=[common, solver], help="paired drift missions")
    s.add_argument("scenario")
    s.add_argument("mission")
    s.add_argument("--source", choices=["optimized", "random", "none", "all"], default="all")
    s.add_argument("--runs", type=int, default=50, help="number of seeds")
    s.add_argument("--placement", default=None, help="placement JSON to use as 'optimized'")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("deriv-check", parents=[common], help="finite-difference audits")
    s.add_argument("--points", type=int, default=100)
    s.set_defaults(func=cmd_deriv_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.workers = resolve_workers(args.workers)
        return args.func(args)
    except ScenarioFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleScenarioError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
