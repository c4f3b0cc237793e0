"""Multi-start log-barrier Newton method for the epigraph NLP."""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment, nnls

from .exceptions import ConvergenceError, InfeasibleScenarioError
from .nlp import NlpInstance, Placement, best_headings, evaluate_placement

logger = logging.getLogger(__name__)

START_SLACK = 1e-6
MAX_SAMPLING_ATTEMPTS = 100_000
DISTINCT_RADIUS = 0.5
TIE_TOL = 1e-8


@dataclass
class SolverConfig:
    kkt_tol: float = 1e-6
    mu0: float = 1.0
    barrier_shrink: float = 0.1
    barrier_floor: float = 1e-9
    max_newton_iters: int = 50
    starts: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    rng_seed: int = 0
    workers: int = 1
    max_step: Optional[float] = 0.2
    centering_tol: float = 1e-2

    def __post_init__(self):
        if min(self.kkt_tol, self.mu0, self.barrier_floor) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.barrier_shrink < 1:
            raise ValueError("barrier_shrink must lie in (0, 1)")
        if self.starts < 1 or self.max_newton_iters < 1:
            raise ValueError("starts and max_newton_iters must be >= 1")


@dataclass
class StartResult:
    index: int
    x: np.ndarray
    objective: float
    initial_objective: float
    kkt_residual: float
    complementarity: float
    min_slack: float
    converged: bool
    iterations: int
    status: str
    merit_history: List[List[float]] = field(default_factory=list)


@dataclass
class SolveReport:
    best: Placement
    objective: float
    kkt_residual: float
    starts_converged: int
    distinct_local_minima: list
    wall_time: float
    newton_iterations_total: int
    x: np.ndarray
    trace: List[StartResult]


# starting points


def _push_clear(scenario, c, rng, margin):
    """Move ``c`` radially away from setpoints closer than ``margin``, then clip."""
    X = scenario.setpoints
    planar = scenario.fov is not None
    lim = scenario.r_max * (1 - 1e-3)
    for _ in range(50):
        moved = False
        for x in X:
            d = c - x
            if planar:
                dz = d[2]
                dh = d[:2]
                need = np.sqrt(max(margin**2 - dz**2, 0.0)) * (1 + 1e-9)
                nh = np.linalg.norm(dh)
                if np.hypot(nh, dz) < margin:
                    u = dh / nh if nh > 1e-12 else _unit(rng, 2)
                    c = c.copy()
                    c[:2] = x[:2] + u * need
                    moved = True
            else:
                nd = np.linalg.norm(d)
                if nd < margin:
                    u = d / nd if nd > 1e-12 else _unit(rng, 3)
                    c = x + u * margin * (1 + 1e-9)
                    moved = True
        norm = np.linalg.norm(c)
        if norm > lim:
            if planar:
                h = c[2]
                rho = np.sqrt(lim**2 - h**2)
                c = c.copy()
                c[:2] *= rho / np.linalg.norm(c[:2])
            else:
                c = c * (lim / norm)
            moved = True
        if not moved:
            break
    return c


def _unit(rng, dim):
    u = rng.normal(size=dim)
    return u / np.linalg.norm(u)


def _heuristic_landmarks(scenario, rng):
    X = scenario.setpoints
    M = scenario.M
    k = min(M, len(np.unique(X, axis=0)))
    seed = int(rng.integers(2**31 - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centers, _ = kmeans2(X, k, minit="++", seed=seed)
    extra = [X[rng.integers(len(X))] + scenario.r_min * _unit(rng, 3) for _ in range(M - k)]
    Z = np.vstack([centers] + extra) if extra else centers
    if scenario.fov is not None:
        Z = Z.copy()
        Z[:, 2] = scenario.fov.landmark_height
    margin = 1.1 * scenario.r_min
    return np.array([_push_clear(scenario, z, rng, margin) for z in Z])


def _sample_landmarks(scenario, rng, budget):
    """Rejection-sample a strictly feasible landmark set; returns (Z, attempts)."""
    X = scenario.setpoints
    chosen = []
    attempts = 0
    thresh = scenario.r_min**2 + START_SLACK
    while len(chosen) < scenario.M:
        if attempts >= budget:
            return None, attempts
        attempts += 1
        z = scenario.sample_landmark_positions(rng, 1)[0]
        if scenario.r_max**2 - z @ z < START_SLACK:
            continue
        if ((X - z) ** 2).sum(1).min() < thresh:
            continue
        if scenario.fov is not None:
            if best_headings(scenario, np.array(chosen + [z]))[1].min() <= START_SLACK:
                continue
        chosen.append(z)
    return np.array(chosen), attempts


def _start_vector(nlp, Z):
    place = evaluate_placement(nlp.scenario, Z)
    return nlp.pack(Z, 1.1 * place.max_cost)


def _strictly_feasible(nlp, v):
    return bool(nlp.constraints(v).min() >= START_SLACK)


def initialize_starts(scenario, k, rng):
    """One clustering-based start followed by ``k - 1`` sampled feasible starts.

    Every returned decision vector has all constraint residuals at least
    ``1e-6``. If the clustering start cannot be made strictly feasible it is
    replaced by a sampled one.
    """
    nlp = NlpInstance(scenario)
    starts = []
    if scenario.M == 0:
        return [nlp.pack(np.zeros((0, 3)), 1.1 * evaluate_placement(scenario, np.zeros((0, 3))).max_cost)]
    v = _start_vector(nlp, _heuristic_landmarks(scenario, rng))
    if _strictly_feasible(nlp, v):
        starts.append(v)
    used = 0
    while len(starts) < k:
        Z, attempts = _sample_landmarks(scenario, rng, MAX_SAMPLING_ATTEMPTS - used)
        used += attempts
        if Z is None:
            raise InfeasibleScenarioError(
                f"no strictly feasible start after {MAX_SAMPLING_ATTEMPTS} samples"
            )
        v = _start_vector(nlp, Z)
        if _strictly_feasible(nlp, v):
            starts.append(v)
    return starts


# barrier method


def _newton_direction(H, g):
    lam = 0.0
    n = len(g)
    while True:
        try:
            factor = cho_factor(H + lam * np.eye(n), check_finite=False)
            p = cho_solve(factor, -g, check_finite=False)
            if np.all(np.isfinite(p)):
                return p, lam
        except LinAlgError:
            pass
        lam = 1e-10 if lam == 0.0 else 2 * lam
        if lam > 1e20:
            raise LinAlgError("Newton system could not be regularized")


def _merit(nlp, v, mu):
    c = nlp.constraints(v)
    if np.any(c <= 0):
        return np.inf, c
    return nlp.objective(v) - mu * np.log(c).sum(), c


def _merit_change(nlp, v, c, trial, mu):
    """Barrier merit difference computed without cancellation."""
    c_t = nlp.constraints(trial)
    if np.any(c_t <= 0) or not np.all(np.isfinite(c_t)):
        return np.inf, c_t
    dt = nlp.objective(trial) - nlp.objective(v)
    return dt - mu * np.log1p((c_t - c) / c).sum(), c_t


def kkt_certificate(nlp, v, mu):
    """Stationarity residual and complementarity with refitted multipliers.

    Multipliers on the near-active constraints are fitted by non-negative
    least squares to the objective gradient, so the residual depends only on
    the constraint Jacobian and not on the tiny slacks ``mu / lambda``.
    """
    c = nlp.constraints(v)
    Jc = nlp.jacobian(v)
    lam_barrier = mu / c
    active = lam_barrier >= 1e-6 * lam_barrier.max()
    lam = np.zeros_like(c)
    lam[active], _ = nnls(Jc[active].T, nlp.objective_grad(v))
    residual = nlp.objective_grad(v) - Jc.T @ lam
    return float(np.abs(residual).max()), float((lam * np.maximum(c, 0)).max()), lam


def barrier_solve(nlp, v0, cfg, index=0):
    """Run the barrier continuation from one strictly feasible start."""
    v = np.array(v0, float)
    mu = cfg.mu0
    total_iters = 0
    history = []
    status = "max_iterations"
    gobj = nlp.objective_grad(v)
    initial = evaluate_placement(nlp.scenario, nlp.landmarks(v)).max_cost
    grad_inf = np.inf
    while True:
        final = mu <= cfg.barrier_floor * (1 + 1e-12)
        merits = []
        phi, c = _merit(nlp, v, mu)
        merits.append(phi)
        stage_done = False
        for _ in range(cfg.max_newton_iters):
            nlp.prepare(v)
            Jc = nlp.jacobian(v)
            inv_c = 1.0 / c
            g = gobj - mu * (Jc.T @ inv_c)
            grad_inf = float(np.abs(g).max())
            if final and grad_inf <= cfg.kkt_tol:
                stage_done = True
                break
            H = mu * (Jc.T * inv_c**2) @ Jc + nlp.hessian(v, -mu * inv_c)
            H = 0.5 * (H + H.T)
            p, _ = _newton_direction(H, g)
            dec = float(-g @ p)
            if cfg.max_step is not None:
                size = np.abs(p[: nlp.t_index]).max(initial=0.0)
                if size > cfg.max_step * nlp.scenario.r_max:
                    p = p * (cfg.max_step * nlp.scenario.r_max / size)
            if not final and (dec <= cfg.centering_tol * mu or grad_inf <= cfg.kkt_tol):
                stage_done = True
                break
            alpha = 1.0
            accepted = False
            while alpha > 1e-14:
                trial = v + alpha * p
                change, c_t = _merit_change(nlp, v, c, trial, mu)
                if change <= cfg.armijo * alpha * float(g @ p):
                    accepted = True
                    break
                alpha *= cfg.backtrack
            total_iters += 1
            if not accepted:
                break
            v, phi, c = trial, phi + change, c_t
            merits.append(phi)
        history.append(merits)
        logger.debug("mu=%.1e iterations=%d grad=%.2e", mu, len(merits) - 1, grad_inf)
        if final:
            status = "converged" if stage_done else "stalled"
            break
        mu = max(mu * cfg.barrier_shrink, cfg.barrier_floor)
    c = nlp.constraints(v)
    residual, comp = grad_inf, float(mu)
    if status == "stalled":
        residual, comp, _ = kkt_certificate(nlp, v, mu)
    converged = residual <= cfg.kkt_tol and comp <= 10 * cfg.barrier_floor
    if converged:
        status = "converged"
    return StartResult(
        index=index,
        x=v,
        objective=nlp.objective(v),
        initial_objective=initial,
        kkt_residual=residual,
        complementarity=comp,
        min_slack=float(c.min()),
        converged=converged,
        iterations=total_iters,
        status=status,
        merit_history=history,
    )


def _run_start(args):
    nlp, v0, cfg, index = args
    try:
        return barrier_solve(nlp, v0, cfg, index)
    except (LinAlgError, FloatingPointError, ValueError) as err:
        logger.debug("start %d failed: %s", index, err)
        return StartResult(index, np.array(v0), np.inf, np.inf, np.inf, np.inf, -np.inf,
                           False, 0, f"error: {err}")


def landmark_distance(Z1, Z2):
    """Largest displacement under the best one-to-one matching of two landmark sets."""
    if len(Z1) == 0:
        return 0.0
    D = np.linalg.norm(Z1[:, None] - Z2[None], axis=-1)
    rows, cols = linear_sum_assignment(D)
    return float(D[rows, cols].max())


def solve(nlp, cfg=None, starts=None):
    """Best KKT point over several barrier runs.

    Parameters
    ----------
    nlp : NlpInstance
    cfg : SolverConfig, optional
    starts : list of arrays, optional
        Explicit starting points; generated by :func:`initialize_starts` otherwise.

    Raises
    ------
    InfeasibleScenarioError
        No strictly feasible start could be generated.
    ConvergenceError
        No start reached the KKT tolerance.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if starts is None:
        rng = np.random.default_rng(cfg.rng_seed)
        starts = initialize_starts(nlp.scenario, cfg.starts, rng)
    jobs = [(nlp, v0, cfg, i) for i, v0 in enumerate(starts)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_start, jobs))
    else:
        results = [_run_start(job) for job in jobs]
    good = [r for r in results if r.converged]
    if not good:
        raise ConvergenceError("no start reached the KKT tolerance", trace=results)
    best = None
    for r in good:
        if best is None or r.objective < best.objective - TIE_TOL:
            best = r
    distinct = []
    reps = []
    for r in sorted(good, key=lambda r: (r.objective, r.index)):
        Z = nlp.landmarks(r.x)
        if all(landmark_distance(Z, R) > DISTINCT_RADIUS for R in reps):
            reps.append(Z)
            distinct.append((nlp.placement(r.x), r.objective))
    return SolveReport(
        best=nlp.placement(best.x),
        objective=best.objective,
        kkt_residual=best.kkt_residual,
        starts_converged=len(good),
        distinct_local_minima=distinct,
        wall_time=time.perf_counter() - t0,
        newton_iterations_total=sum(r.iterations for r in results),
        x=best.x,
        trace=results,
    )


# local-minimality probe


@dataclass
class DescentResult:
    """A direction along which the worst-case cost strictly decreases."""

    direction: np.ndarray
    step: float
    decrease: float
    kind: str


def _free_coords(scenario):
    """Landmark coordinates that may move: all three, or x and y in planar mode."""
    mask = np.ones((scenario.M, 3), bool)
    if scenario.fov is not None:
        mask[:, 2] = False
    return mask.ravel()


def _line_search(scenario, Z, d, f0, scale):
    for t in scale * 0.5 ** np.arange(30):
        p = evaluate_placement(scenario, Z + t * d.reshape(Z.shape))
        if p.feasible and p.max_cost < f0 - 1e-12 * abs(f0):
            return t, f0 - p.max_cost
    return None


def find_descent_direction(scenario, landmarks, active_tol=1e-9, random_dirs=200, seed=0):
    """Look for a feasible direction that lowers the worst-case cost.

    Candidates are tried in order: a first-order direction from a linear
    program over the active setpoint gradients; the most negative curvature
    direction of the multiplier-weighted Hessian on the null space of those
    gradients; random directions. Each is accepted only if an actual step
    lowers the maximum cost, so a returned result is a certificate that
    ``landmarks`` is not a local minimum.

    Returns
    -------
    DescentResult or None
    """
    from scipy.optimize import linprog

    from .core import setpoint_cost_derivatives

    Z = np.asarray(landmarks, float).reshape(-1, 3)
    base = evaluate_placement(scenario, Z)
    f0 = base.max_cost
    free = _free_coords(scenario)
    scale = 0.1 * scenario.r_min
    vals, G, H = setpoint_cost_derivatives(scenario.setpoints, Z, scenario.model,
                                           scenario.prior_info)
    act = vals >= f0 - active_tol * abs(f0)
    Ga = G[act][:, free]
    n = int(free.sum())

    def lift(x):
        d = np.zeros(free.size)
        d[free] = x
        return d / np.linalg.norm(d)

    # first order: minimize s subject to g_i . d <= s, |d|_inf <= 1
    c = np.r_[np.zeros(n), 1.0]
    A = np.c_[Ga, -np.ones(len(Ga))]
    lp = linprog(c, A_ub=A, b_ub=np.zeros(len(Ga)),
                 bounds=[(-1, 1)] * n + [(None, None)], method="highs")
    if lp.status == 0 and lp.x[-1] < -1e-10 * max(1.0, np.abs(Ga).max()):
        d = lift(lp.x[:n])
        hit = _line_search(scenario, Z, d, f0, scale)
        if hit:
            return DescentResult(d, hit[0], hit[1], "first-order")
    # second order: multipliers minimizing |sum lam_i g_i| on the simplex
    k = len(Ga)
    lam, _ = nnls(np.r_[Ga.T, 1e3 * np.ones((1, k))], np.r_[np.zeros(n), 1e3])
    lam = lam / lam.sum()
    HL = np.einsum("i,ijk->jk", lam, H[act][:, free][:, :, free])
    _, s, Vt = np.linalg.svd(Ga)
    rank = int(np.sum(s > 1e-8 * max(s.max(), 1e-300)))
    Nb = Vt[rank:].T
    cands = []
    if Nb.shape[1]:
        w, V = np.linalg.eigh(Nb.T @ HL @ Nb)
        cands += [("second-order", lift(Nb @ V[:, j])) for j in np.argsort(w)[:3] if w[j] < 0]
    rng = np.random.default_rng(seed)
    cands += [("random", lift(rng.normal(size=n))) for _ in range(random_dirs)]
    for kind, d in cands:
        for sign in (1.0, -1.0):
            hit = _line_search(scenario, Z, sign * d, f0, scale)
            if hit:
                return DescentResult(sign * d, hit[0], hit[1], kind)
    return None
