"""Comparison placement algorithms: grid greedy and a stochastic-ranking ES."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import batch_costs, pair_info_batch, trace_inv_sym3
from .exceptions import InfeasibleScenarioError
from .nlp import evaluate_placement, heading_margins

logger = logging.getLogger(__name__)

_CHUNK = 4096


@dataclass
class GreedyConfig:
    """Grid resolution for :func:`greedy_place`.

    Parameters
    ----------
    grid_spacing : float, optional
        Cell size in metres; ``None`` means ``r_max / 20``.
    boundary_shell : bool
        Also offer points on the ``r_max`` sphere (or circle in cone mode),
        where optima of the ball constraint tend to sit.
    """

    grid_spacing: Optional[float] = None
    boundary_shell: bool = True

    def __post_init__(self):
        if self.grid_spacing is not None and not self.grid_spacing > 0:
            raise ValueError("grid_spacing must be positive")


def _fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * k / n)
    azim = np.pi * (1 + 5**0.5) * k
    return np.column_stack(
        [np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)]
    )


def candidate_grid(scenario, cfg=None):
    """Feasible grid points, in a fixed deterministic order.

    Returns
    -------
    ndarray of shape (G, 3)
        Cartesian grid points first, then boundary points.
    """
    cfg = cfg or GreedyConfig()
    h = cfg.grid_spacing or scenario.r_max / 20
    R = scenario.r_max
    n_half = int(np.floor(R / h))
    axis = h * np.arange(-n_half, n_half + 1)
    if scenario.fov is None:
        g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
        pts = [g[np.linalg.norm(g, axis=1) <= R]]
        if cfg.boundary_shell:
            n_shell = max(12, int(np.ceil(4 * np.pi * R**2 / h**2)))
            pts.append(R * _fibonacci_sphere(n_shell))
    else:
        zh = scenario.fov.landmark_height
        rho = np.sqrt(R**2 - zh**2)
        g = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
        g = g[np.linalg.norm(g, axis=1) <= rho]
        pts = [np.column_stack([g, np.full(len(g), zh)])]
        if cfg.boundary_shell:
            n_ring = max(8, int(np.ceil(2 * np.pi * rho / h)))
            ang = 2 * np.pi * np.arange(n_ring) / n_ring
            pts.append(np.column_stack([rho * np.cos(ang), rho * np.sin(ang), np.full(n_ring, zh)]))
    G = np.concatenate(pts)
    d2 = ((G[:, None, :] - scenario.setpoints[None]) ** 2).sum(-1)
    return G[d2.min(axis=1) >= scenario.r_min**2]


def _candidate_info(scenario, G):
    """Information added at every setpoint by each candidate, shape (G, N, 3, 3)."""
    r = G[:, None, :] - scenario.setpoints[None]
    return scenario.model.noise_info * pair_info_batch(r, scenario.model.delta)


def greedy_place(scenario, cfg=None):
    """Place landmarks one at a time on a feasible grid.

    Each step adds the grid point giving the lowest worst-case cost given
    the landmarks already placed. Ties go to the lowest grid index. In
    field-of-view mode a candidate is skipped when no heading assignment can
    see the enlarged set.

    Parameters
    ----------
    scenario : Scenario
    cfg : GreedyConfig, optional

    Returns
    -------
    Placement
        ``evaluations`` is attached as an attribute.

    Raises
    ------
    InfeasibleScenarioError
        When the grid holds fewer than M usable points.
    """
    cfg = cfg or GreedyConfig()
    G = candidate_grid(scenario, cfg)
    M = scenario.M
    if len(G) < M:
        raise InfeasibleScenarioError(
            f"feasible grid has {len(G)} points but {M} landmarks are required"
        )
    N = scenario.N
    J = np.broadcast_to(scenario.prior_info, (N, 3, 3)).copy()
    available = np.ones(len(G), bool)
    chosen = []
    evaluations = 0
    for _ in range(M):
        scores = np.full(len(G), np.inf)
        for s in range(0, len(G), _CHUNK):
            blk = slice(s, s + _CHUNK)
            info = _candidate_info(scenario, G[blk])
            scores[blk] = trace_inv_sym3(J[None] + info).max(axis=1)
        evaluations += int(available.sum())
        scores[~available] = np.inf
        pick = None
        for idx in np.argsort(scores, kind="stable"):
            if not np.isfinite(scores[idx]):
                break
            if scenario.fov is not None:
                trial = np.vstack([G[chosen], G[idx]]) if chosen else G[idx][None]
                _, marg = heading_margins(
                    scenario.setpoints, trial, scenario.fov.alpha, scenario.model.delta
                )
                if marg.min() < 0:
                    continue
            pick = int(idx)
            break
        if pick is None:
            raise InfeasibleScenarioError("no grid point keeps every cone satisfiable")
        chosen.append(pick)
        available[pick] = False
        J += _candidate_info(scenario, G[pick][None])[0]
    placement = evaluate_placement(scenario, G[chosen])
    placement.evaluations = evaluations
    return placement


@dataclass
class EvoConfig:
    """Settings of the stochastic-ranking evolution strategy.

    Parameters
    ----------
    population : int, optional
        Offspring per generation (lambda); ``None`` means 15 x dimension.
    generations : int
        Generation cap.
    eval_budget : int, optional
        Objective evaluation cap; ``None`` means population x generations.
    pf : float
        Probability of comparing by objective when a pair is not jointly feasible.
    parent_fraction : float
        mu / lambda.
    gamma : float
        Differential-variation step for the leading parents.
    smoothing : float
        Exponential smoothing of the step sizes after mutation.
    rng_seed : int
    """

    population: Optional[int] = None
    generations: int = 300
    eval_budget: Optional[int] = None
    pf: float = 0.45
    parent_fraction: float = 1 / 7
    gamma: float = 0.85
    smoothing: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")
        if self.generations < 1:
            raise ValueError("generations must be positive")
        if not 0 <= self.pf <= 1:
            raise ValueError("pf must lie in [0, 1]")


def _population_landmarks(scenario, P):
    """Decision rows (P, M*zdim) to landmark arrays (P, M, 3)."""
    M = scenario.M
    if scenario.fov is None:
        return P.reshape(len(P), M, 3)
    Z = np.empty((len(P), M, 3))
    Z[..., :2] = P.reshape(len(P), M, 2)
    Z[..., 2] = scenario.fov.landmark_height
    return Z


def population_fitness(scenario, P):
    """Worst-case cost and constraint penalty for each row of ``P``.

    The penalty is the sum of squared positive constraint violations
    (metres squared); zero means feasible.
    """
    Z = _population_landmarks(scenario, P)
    cost = batch_costs(scenario.setpoints, Z, scenario.model, scenario.prior_info, check=False).max(axis=-1)
    over = np.maximum(np.linalg.norm(Z, axis=-1) - scenario.r_max, 0)
    dist = np.linalg.norm(Z[:, None, :, :] - scenario.setpoints[None, :, None, :], axis=-1)
    under = np.maximum(scenario.r_min - dist, 0)
    phi = (over**2).sum(-1) + (under**2).sum((-1, -2))
    if scenario.fov is not None:
        _, marg = heading_margins(scenario.setpoints, Z, scenario.fov.alpha, scenario.model.delta)
        phi = phi + (np.maximum(-marg, 0) ** 2).sum(-1)
    cost = np.where(np.isfinite(cost), cost, np.inf)
    return cost, phi


def stochastic_rank(f, phi, pf, rng):
    """Order individuals by stochastic ranking.

    Adjacent pairs are compared by objective when both are feasible or with
    probability ``pf``, otherwise by penalty. Comparisons run as vectorized
    odd-even transposition sweeps until a sweep makes no swap.

    Returns
    -------
    ndarray of int
        Indices, best first.
    """
    n = len(f)
    if not np.any(phi):
        # every comparison is by objective; the sweeps converge to a stable sort
        return np.argsort(f, kind="stable")
    order = np.arange(n)
    fo, po = np.asarray(f, float).copy(), np.asarray(phi, float).copy()
    for sweep in range(n):
        swapped = False
        for start in (sweep % 2, 1 - sweep % 2):
            if start >= n - 1:
                continue
            lo, hi = slice(start, n - 1, 2), slice(start + 1, n, 2)
            fa, fb, pa, pb = fo[lo], fo[hi], po[lo], po[hi]
            by_f = ((pa == 0) & (pb == 0)) | (rng.random(len(fa)) < pf)
            worse = np.where(by_f, fa > fb, pa > pb)
            if worse.any():
                swapped = True
                for arr in (order, fo, po):
                    x, y = arr[lo], arr[hi]
                    x[worse], y[worse] = y[worse], x[worse].copy()
        if not swapped:
            break
    return order


def evolve_place(scenario, cfg=None):
    """Global search by a (mu, lambda) evolution strategy with stochastic ranking.

    Parameters
    ----------
    scenario : Scenario
    cfg : EvoConfig, optional

    Returns
    -------
    Placement
        Best feasible individual seen (elitist archive). ``evaluations`` and
        ``history`` (best feasible objective per generation) are attached.

    Raises
    ------
    InfeasibleScenarioError
        If no evaluated individual was feasible.
    """
    cfg = cfg or EvoConfig()
    rng = np.random.default_rng(cfg.rng_seed)
    zdim = 2 if scenario.fov is not None else 3
    n = zdim * scenario.M
    lam = cfg.population or 15 * n
    mu = max(2, int(round(lam * cfg.parent_fraction)))
    budget = cfg.eval_budget if cfg.eval_budget is not None else lam * cfg.generations
    if budget < lam:
        raise ValueError("eval_budget must be at least the population size")
    bound = scenario.r_max
    if scenario.fov is not None:
        bound = np.sqrt(scenario.r_max**2 - scenario.fov.landmark_height**2)
    lo, hi = -bound, bound
    tau = 1 / np.sqrt(2 * np.sqrt(n))
    tau_g = 1 / np.sqrt(2 * n)

    X = rng.uniform(lo, hi, size=(lam, n))
    S = np.full((lam, n), (hi - lo) / np.sqrt(n))
    best_x, best_f = None, np.inf
    evaluations = 0
    history = []
    for _ in range(cfg.generations):
        if evaluations + lam > budget:
            break
        f, phi = population_fitness(scenario, X)
        evaluations += lam
        feas = np.flatnonzero(phi == 0)
        if len(feas):
            k = feas[np.argmin(f[feas])]
            if f[k] < best_f:
                best_f, best_x = float(f[k]), X[k].copy()
        history.append(best_f)
        order = stochastic_rank(f, phi, cfg.pf, rng)[:mu]
        Xp, Sp = X[order], S[order]

        parent = np.arange(lam) % mu
        Snew = Sp[parent].copy()
        Xnew = np.empty_like(X)
        # differential variation on the leading parents
        dv = np.arange(min(mu - 1, lam))
        Xnew[dv] = Xp[dv] + cfg.gamma * (Xp[0] - Xp[dv + 1])
        rest = np.arange(len(dv), lam)
        Snew[rest] = Sp[parent[rest]] * np.exp(
            tau_g * rng.normal(size=(len(rest), 1)) + tau * rng.normal(size=(len(rest), n))
        )
        Xnew[rest] = Xp[parent[rest]] + Snew[rest] * rng.normal(size=(len(rest), n))
        for _retry in range(10):
            bad = (Xnew[rest] < lo) | (Xnew[rest] > hi)
            if not bad.any():
                break
            redraw = Xp[parent[rest]] + Snew[rest] * rng.normal(size=(len(rest), n))
            Xnew[rest] = np.where(bad, redraw, Xnew[rest])
        Xnew = np.clip(Xnew, lo, hi)
        Snew[rest] = Sp[parent[rest]] + cfg.smoothing * (Snew[rest] - Sp[parent[rest]])
        X, S = Xnew, Snew

    if best_x is None:
        raise InfeasibleScenarioError("no feasible individual found within the budget")
    placement = evaluate_placement(scenario, _population_landmarks(scenario, best_x[None])[0])
    placement.evaluations = evaluations
    placement.history = history
    return placement
