"""Benchmark harness: ours vs grid greedy vs evolutionary on random instances.

Result tables hold objectives and gaps only, so they are byte-identical for
a given seed whatever the worker count. Wall-clock times go to a separate
timings table.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import EvoConfig, GreedyConfig, evolve_place, greedy_place
from .core import MeasurementModel
from .exceptions import ConvergenceError, InfeasibleScenarioError, LandmarkOptError
from .io import write_csv
from .nlp import Scenario, build_nlp
from .solver import SolverConfig, solve

logger = logging.getLogger(__name__)

ROW_HEADER = [
    "table", "N", "M", "sigma_m", "instance", "instance_seed", "resamples",
    "algorithm", "run", "status", "objective", "gap",
]
TIMING_HEADER = ["table", "N", "M", "sigma_m", "instance", "algorithm", "run", "wall_time_s"]
SUMMARY_HEADER = ["table", "N", "M", "sigma_m", "algorithm", "median_gap", "count", "failures"]
MAX_RESAMPLES = 100
_TABLE_CODE = {"size": 1, "noise": 2}


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def sample_instance(N, M, sigma_m, seed, radius=40.0, r_min=2.0, r_max=60.0, prior_var=30.0):
    """Setpoints uniform in a ball, resampled until the feasible set is non-empty.

    Returns
    -------
    scenario : Scenario
    resamples : int
    """
    rng = np.random.default_rng(seed)
    model = MeasurementModel.isotropic(sigma_m, prior_var=prior_var)
    for attempt in range(MAX_RESAMPLES):
        u = rng.normal(size=(N, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        X = u * radius * rng.random((N, 1)) ** (1 / 3)
        sc = Scenario(X, M, r_min, r_max, model, seed=seed)
        try:
            sc.check_feasible()
        except InfeasibleScenarioError:
            continue
        return sc, attempt
    raise InfeasibleScenarioError(f"no feasible instance after {MAX_RESAMPLES} resamples")


@dataclass
class Job:
    table: str
    N: int
    M: int
    sigma_m: float
    sigma_index: int
    instance: int


def _status(exc):
    if isinstance(exc, InfeasibleScenarioError):
        return "infeasible"
    if isinstance(exc, ConvergenceError):
        return "nonconvergence"
    return f"error:{type(exc).__name__}"


def _timed(fn):
    t = time.perf_counter()
    try:
        value = fn()
        status = "ok"
    except (LandmarkOptError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        value, status = None, _status(exc)
    return value, status, time.perf_counter() - t


def run_job(job, spec):
    """Every algorithm and run on one instance. Returns (rows, timings)."""
    iseed = _seed(spec.seed, _TABLE_CODE[job.table], job.N, job.M, job.sigma_index, job.instance)
    base = {"table": job.table, "N": job.N, "M": job.M, "sigma_m": job.sigma_m,
            "instance": job.instance, "instance_seed": iseed}
    try:
        sc, resamples = sample_instance(job.N, job.M, job.sigma_m, iseed, spec.sphere_radius,
                                        spec.r_min, spec.r_max, spec.prior_var)
    except InfeasibleScenarioError:
        row = {**base, "resamples": MAX_RESAMPLES, "algorithm": "instance", "run": 0,
               "status": "infeasible", "objective": math.nan}
        return [row], []
    base["resamples"] = resamples
    results = []
    for alg in spec.algorithms:
        runs = 1 if alg == "greedy" else spec.runs
        for r in range(runs):
            rseed = _seed(iseed, r)
            if alg == "ours":
                fn = lambda: solve(build_nlp(sc), SolverConfig(starts=spec.starts, rng_seed=rseed)).objective
            elif alg == "greedy":
                fn = lambda: greedy_place(sc, GreedyConfig(spec.grid_spacing)).max_cost
            else:
                cfg = EvoConfig(population=spec.evo_population, rng_seed=rseed)
                if spec.evo_generations:
                    cfg.generations = spec.evo_generations
                fn = lambda: evolve_place(sc, cfg).max_cost
            value, status, wall = _timed(fn)
            results.append((alg, r, status, value, wall))
    evo = [v for a, _, s, v, _ in results if a == "evolutionary" and s == "ok"]
    ref = float(np.median(evo)) if evo else math.nan
    rows, timings = [], []
    for alg, r, status, value, wall in results:
        obj = math.nan if value is None else float(value)
        gap = (obj - ref) / ref if math.isfinite(obj) and math.isfinite(ref) else math.nan
        rows.append({**base, "algorithm": alg, "run": r, "status": status,
                     "objective": obj, "gap": gap})
        timings.append({k: base[k] for k in ("table", "N", "M", "sigma_m", "instance")}
                       | {"algorithm": alg, "run": r, "wall_time_s": wall})
    return rows, timings


def _run_job_star(args):
    return run_job(*args)


def plan_jobs(spec):
    jobs = []
    if "size" in spec.tables:
        for N in spec.N_list:
            for M in spec.M_list:
                jobs += [Job("size", N, M, spec.sigma_m, 0, i) for i in range(spec.instances)]
    if "noise" in spec.tables:
        for k, s in enumerate(spec.sigma_list):
            jobs += [Job("noise", spec.noise_N, spec.noise_M, float(s), k, i)
                     for i in range(spec.instances)]
    return jobs


@dataclass
class BenchResult:
    rows: list
    timings: list
    summary: list = field(default_factory=list)
    timing_summary: list = field(default_factory=list)

    def median_gap(self, table, algorithm, **cell):
        for s in self.summary:
            if s["table"] == table and s["algorithm"] == algorithm and all(
                s[k] == v for k, v in cell.items()
            ):
                return s["median_gap"]
        raise KeyError((table, algorithm, cell))

    def median_time(self, algorithm, **cell):
        for s in self.timing_summary:
            if s["algorithm"] == algorithm and all(s[k] == v for k, v in cell.items()):
                return s["median_wall_time_s"]
        raise KeyError((algorithm, cell))


def summarize(rows):
    groups = {}
    for r in rows:
        if r["algorithm"] == "instance":
            continue
        key = (r["table"], r["N"], r["M"], r["sigma_m"], r["algorithm"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        gaps = [r["gap"] for r in rs if r["status"] == "ok" and math.isfinite(r["gap"])]
        out.append(dict(zip(["table", "N", "M", "sigma_m", "algorithm"], key))
                   | {"median_gap": float(np.median(gaps)) if gaps else math.nan,
                      "count": len(gaps), "failures": sum(r["status"] != "ok" for r in rs)})
    return out


def summarize_timings(timings):
    groups = {}
    for t in timings:
        groups.setdefault((t["table"], t["N"], t["M"], t["sigma_m"], t["algorithm"]), []).append(
            t["wall_time_s"])
    return [dict(zip(["table", "N", "M", "sigma_m", "algorithm"], k))
            | {"median_wall_time_s": float(np.median(v)), "count": len(v)}
            for k, v in groups.items()]


def run_bench(spec, workers=1):
    """Run every planned job; output order follows the plan, not completion."""
    jobs = plan_jobs(spec)
    args = [(job, spec) for job in jobs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_job_star, args))
    else:
        parts = [_run_job_star(a) for a in args]
    rows = [r for p in parts for r in p[0]]
    timings = [t for p in parts for t in p[1]]
    return BenchResult(rows, timings, summarize(rows), summarize_timings(timings))


def _pivot_markdown(summary, table, col_key, col_fmt):
    cells = sorted({s[col_key] for s in summary if s["table"] == table},
                   key=lambda c: c if col_key != "sigma_m" else -c)
    algs = [a for a in ("ours", "greedy", "evolutionary")
            if any(s["algorithm"] == a and s["table"] == table for s in summary)]
    lines = ["| algorithm | " + " | ".join(col_fmt(c) for c in cells) + " |",
             "|---" * (len(cells) + 1) + "|"]
    for a in algs:
        vals = []
        for c in cells:
            v = [s["median_gap"] for s in summary
                 if s["table"] == table and s["algorithm"] == a and s[col_key] == c]
            vals.append(f"{v[0]:.3f}" if v and math.isfinite(v[0]) else "-")
        lines.append(f"| {a} | " + " | ".join(vals) + " |")
    return "\n".join(lines)


def write_bench(result, out_dir):
    """Write rows.csv, summary.csv, summary.md, timings.csv and timing_summary.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "rows.csv", ROW_HEADER, result.rows)
    write_csv(out / "summary.csv", SUMMARY_HEADER, result.summary)
    write_csv(out / "timings.csv", TIMING_HEADER, result.timings)
    write_csv(out / "timing_summary.csv",
              ["table", "N", "M", "sigma_m", "algorithm", "median_wall_time_s", "count"],
              result.timing_summary)
    md = ["# Median relative gap to the evolutionary reference", ""]
    size = [s | {"cell": f"N={s['N']},M={s['M']}"} for s in result.summary if s["table"] == "size"]
    if size:
        md += ["## Team size", "", _pivot_markdown(size, "size", "cell", str), ""]
    noise = [s for s in result.summary if s["table"] == "noise"]
    if noise:
        md += ["## Bearing noise", "",
               _pivot_markdown(noise, "noise", "sigma_m", lambda c: f"sigma={c:g}"), ""]
    (out / "summary.md").write_text("\n".join(md))
