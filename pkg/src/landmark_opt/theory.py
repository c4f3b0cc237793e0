"""Certified suboptimality of the smoothed objective.

The smoothing length delta perturbs every information matrix by at most
``M sigma^-2 / (min distance^2 (1 + zeta^2))`` in spectral norm. Whenever the
trace of the inverse is below ``s0`` that perturbation moves the trace by a
factor of at most ``1 + eta``. The checkers here test each link of that
argument numerically and report the worst slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MeasurementModel, pair_info_batch, trace_inv_sym3

ZETA_CAP = 1e5
# zeta^2 that is usually quoted for r_tol/r_min=10, M=10, sigma=1e-2, eta=0.1;
# direct substitution gives 2e8, and the cap hides the difference
QUOTED_ZETA_SQ = 2e9
AUDIT_INPUTS = dict(tol_ratio=10.0, M=10, sigma_m=1e-2, eta=0.1)


@dataclass(frozen=True)
class TheoryParams:
    """Smoothing level and the uncertainty threshold it certifies.

    ``s0 = eta / (eta + 1) * r_min**2 / M * sigma_m**2 * (1 + zeta**2)`` and
    ``delta_max = r_min / zeta``.
    """

    eta: float
    zeta: float
    r_tol: float
    s0: float
    delta_max: float
    r_min: float
    M: int
    sigma_m: float
    zeta_cap: float = ZETA_CAP
    zeta_uncapped: Optional[float] = None

    @classmethod
    def from_zeta(cls, eta, zeta, r_min, M, sigma_m, r_tol=None):
        """Build parameters for an explicit ``zeta`` (no cap applied)."""
        if not (eta > 0 and zeta > 1 and r_min > 0 and M >= 1 and sigma_m > 0):
            raise ValueError("need eta > 0, zeta > 1, r_min > 0, M >= 1, sigma_m > 0")
        s0 = eta / (eta + 1) * r_min**2 / M * sigma_m**2 * (1 + zeta**2)
        return cls(
            eta=float(eta), zeta=float(zeta),
            r_tol=float(r_tol if r_tol is not None else math.sqrt(s0)),
            s0=float(s0), delta_max=float(r_min / zeta), r_min=float(r_min),
            M=int(M), sigma_m=float(sigma_m), zeta_uncapped=float(zeta),
        )

    @property
    def perturbation_bound(self):
        """Eigenvalue shift bound ``M sigma^-2 / (r_min^2 (1 + zeta^2))``."""
        return self.M / (self.sigma_m**2 * self.r_min**2 * (1 + self.zeta**2))

    @property
    def guarantee_factor(self):
        return (1 + self.eta) ** 2

    def as_dict(self):
        return {
            "eta": self.eta, "zeta": self.zeta, "zeta_uncapped": self.zeta_uncapped,
            "zeta_cap": self.zeta_cap, "r_tol": self.r_tol, "s0": self.s0,
            "delta_max": self.delta_max, "r_min": self.r_min, "M": self.M,
            "sigma_m": self.sigma_m,
        }


def zeta_squared(r_tol, r_min, M, sigma_m, eta):
    """Uncapped ``(r_tol / r_min)^2 M sigma_m^-2 2 / eta``."""
    return (r_tol / r_min) ** 2 * M / sigma_m**2 * 2 / eta


def select_zeta(r_tol, r_min, M, sigma_m, eta, zeta_cap=ZETA_CAP):
    """Pick zeta from a tolerated uncertainty radius, capped at ``zeta_cap``.

    Parameters
    ----------
    r_tol : float
        Largest tolerated one-sigma uncertainty radius (m), at least ``r_min``.
    r_min : float
    M : int
    sigma_m : float
    eta : float

    Returns
    -------
    TheoryParams
    """
    if not (r_tol > 0 and r_min > 0 and M >= 1 and sigma_m > 0 and eta > 0):
        raise ValueError("all inputs must be positive")
    if r_tol < r_min:
        raise ValueError("r_tol must be at least r_min")
    raw = math.sqrt(zeta_squared(r_tol, r_min, M, sigma_m, eta))
    zeta = min(raw, zeta_cap)
    if zeta <= 1:
        raise ValueError(f"selected zeta={zeta:.3g} does not exceed 1")
    base = TheoryParams.from_zeta(eta, zeta, r_min, M, sigma_m, r_tol)
    return TheoryParams(**{**base.__dict__, "zeta_cap": zeta_cap, "zeta_uncapped": raw})


def zeta_audit():
    """Direct substitution of the reference inputs next to the quoted value."""
    a = AUDIT_INPUTS
    sq = zeta_squared(a["tol_ratio"], 1.0, a["M"], a["sigma_m"], a["eta"])
    return {
        "inputs": dict(a),
        "zeta_sq_substituted": sq,
        "zeta_sq_quoted": QUOTED_ZETA_SQ,
        "quoted_over_substituted": QUOTED_ZETA_SQ / sq,
        "zeta_capped_substituted": min(math.sqrt(sq), ZETA_CAP),
        "zeta_capped_quoted": min(math.sqrt(QUOTED_ZETA_SQ), ZETA_CAP),
    }


@dataclass
class CheckReport:
    """Outcome of one randomized certification.

    ``worst_slack`` is the smallest relative margin seen; a negative value
    means a violation.
    """

    name: str
    checked: int = 0
    skipped: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0 and self.checked > 0

    def absorb(self, slack, active=None):
        slack = np.asarray(slack, float)
        if active is not None:
            slack = slack[np.asarray(active, bool)]
        self.checked += int(slack.size)
        if slack.size:
            self.violations += int(np.count_nonzero(slack < 0))
            self.worst_slack = min(self.worst_slack, float(slack.min()))

    def as_row(self):
        return {
            "check": self.name, "checked": self.checked, "skipped": self.skipped,
            "violations": self.violations, "worst_slack": self.worst_slack,
            "passed": self.passed,
        }


# sandwich


def _info_stack(X, Z, model, delta):
    """Information at each ``X[k]`` (K, 3) from landmarks ``Z[k]`` (K, M, 3)."""
    r = Z - X[:, None, :]
    S = pair_info_batch(r, delta).sum(axis=1)
    return model.prior_info + model.noise_info * S


def sandwich_slacks(t0, s, eta, flip=False):
    """Relative margins of ``s/(1+eta) <= t0 <= s(1+eta)``.

    With ``flip`` the bound is deliberately inverted, which makes almost every
    configuration fail; used to self-test the reporting path.
    """
    ratio = t0 / s
    lo, hi = 1 / (1 + eta), 1 + eta
    if flip:
        lo, hi = hi, lo
    return np.minimum(ratio - lo, hi - ratio)


def check_sandwich(x, landmarks, model0, model_delta, params, flip=False):
    """Two-sided trace bound between the smoothed and exact costs at one point.

    Returns
    -------
    dict
        ``applicable`` (precondition met), ``forward``/``reverse`` (whether
        each direction of the implication was triggered), ``ratio``
        ``tr(J0^-1)/tr(Jd^-1)``, ``slack`` (worst relative margin over the
        triggered directions, ``inf`` if none) and ``ok``.
    """
    x = np.asarray(x, float).reshape(3)
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    delta = model_delta.delta
    dist = np.linalg.norm(Z - x, axis=1)
    applicable = 0 < delta < params.r_min / params.zeta and bool(np.all(dist >= params.r_min))
    J0 = _info_stack(x[None], Z[None], model0, 0.0)
    Jd = _info_stack(x[None], Z[None], model_delta, delta)
    t0, s = float(trace_inv_sym3(J0)[0]), float(trace_inv_sym3(Jd)[0])
    out = {"applicable": applicable, "ratio": t0 / s, "cost_smoothed": s, "cost_exact": t0}
    slack = math.inf
    out["forward"] = applicable and s <= params.s0
    out["reverse"] = applicable and t0 <= params.s0
    if out["forward"]:
        slack = min(slack, float(sandwich_slacks(t0, s, params.eta, flip)))
    if out["reverse"]:
        slack = min(slack, float(sandwich_slacks(s, t0, params.eta, flip)))
    out["slack"] = slack
    out["ok"] = slack >= 0
    return out


def sample_configs(params, model, rng, n, dist_range=(1.0, 2.0), delta_fraction=None):
    """Random observer/landmark configurations satisfying the distance precondition.

    The observer sits at the origin; landmarks are at distances drawn from
    ``dist_range`` times ``r_min`` in uniform directions. Smoothing lengths
    are uniform in ``(0, delta_max)`` unless ``delta_fraction`` fixes them.

    Returns
    -------
    X : (n, 3), Z : (n, M, 3), deltas : (n,)
    """
    M = params.M
    u = rng.normal(size=(n, M, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    radii = params.r_min * rng.uniform(*dist_range, size=(n, M, 1))
    Z = u * radii
    X = np.zeros((n, 3))
    if delta_fraction is None:
        frac = rng.uniform(0, 1, n)
        frac = np.where(frac == 0, 0.5, frac)
    else:
        frac = np.full(n, float(delta_fraction))
    return X, Z, frac * params.delta_max


def certify_sandwich(params, model, draws=1000, seed=0, flip=False, max_batches=200):
    """Randomized certification of the trace sandwich in both directions.

    Configurations are drawn until ``draws`` of them have smoothed cost at most
    ``s0``. Every accepted configuration is also checked in the reversed
    direction when its exact cost is below ``s0``. A boundary probe with
    every landmark at exactly ``r_min`` and ``delta`` at its limit is added.

    Returns
    -------
    CheckReport
    """
    rng = np.random.default_rng(seed)
    rep = CheckReport("sandwich")
    accepted = 0
    tried = 0
    batch = max(256, draws)
    for _ in range(max_batches):
        if accepted >= draws:
            break
        X, Z, deltas = sample_configs(params, model, rng, batch)
        tried += batch
        J0 = _info_stack(X, Z, model, 0.0)
        r = Z - X[:, None, :]
        S = pair_info_batch(r, deltas[:, None]).sum(axis=1)
        Jd = model.prior_info + model.noise_info * S
        t0, s = trace_inv_sym3(J0), trace_inv_sym3(Jd)
        keep = np.flatnonzero(s <= params.s0)[: draws - accepted]
        accepted += len(keep)
        rep.absorb(sandwich_slacks(t0[keep], s[keep], params.eta, flip))
        rev = keep[t0[keep] <= params.s0]
        rep.absorb(sandwich_slacks(s[rev], t0[rev], params.eta, flip))
    rep.skipped = tried - accepted
    # boundary probe: M landmarks at exactly r_min along cycling axes, delta at its limit
    probe_z = params.r_min * np.eye(3)[np.arange(params.M) % 3]
    probe_model = model.with_delta(params.delta_max * (1 - 1e-12))
    probe = check_sandwich(np.zeros(3), probe_z, model.with_delta(0.0), probe_model, params, flip)
    rep.details.update(
        accepted=accepted, attempts=tried, reverse_checked=rep.checked - accepted,
        boundary_probe=probe,
    )
    if probe["forward"] or probe["reverse"]:
        rep.absorb([probe["slack"]])
    if accepted < draws:
        rep.details["shortfall"] = draws - accepted
    return rep


# sums of reciprocals under bounded perturbation


def claim1_s0(delta_p, eta):
    return eta / (eta + 1) / delta_p


def claim1_slack(lambdas, lambdas_tilde, delta_p, eta, flip=False):
    """Relative margin of the reciprocal-sum sandwich (rows are sequences)."""
    s = (1 / np.asarray(lambdas, float)).sum(-1)
    st = (1 / np.asarray(lambdas_tilde, float)).sum(-1)
    return sandwich_slacks(st, s, eta, flip)


def _simplex_extreme_gap(s, delta_p, samples, rng, d):
    """Worst margin of sum f(a_k) against the one-hot value over ``s``-simplex samples."""
    a = s * rng.dirichlet(np.ones(d), size=samples)
    up = (a / (1 - a * delta_p)).sum(-1)
    down = (a / (1 + a * delta_p)).sum(-1)
    up_star = s / (1 - s * delta_p)
    down_star = s / (1 + s * delta_p)
    return np.minimum((up_star - up) / up_star, (down - down_star) / down_star)


def check_claim1(lambdas, delta_p, eta, draws=10_000, seed=0, flip=False):
    """Certify the reciprocal-sum bound around one base sequence.

    The base sequence is rescaled so that ``sum 1/lambda = 0.99 s0``. Random
    perturbations uniform in ``[-delta_p, delta_p]``, the two uniform shifts,
    and sequences with nearly all mass on one reciprocal are tested, and the
    convexity step is checked by brute-force simplex sampling.

    Returns
    -------
    CheckReport
    """
    lam = np.asarray(lambdas, float).ravel()
    if np.any(lam <= 0):
        raise ValueError("lambdas must be positive")
    rng = np.random.default_rng(seed)
    rep = CheckReport("claim1")
    s0 = claim1_s0(delta_p, eta)
    d = len(lam)
    lam = lam * (1 / lam).sum() / (0.99 * s0)
    noise = rng.uniform(-delta_p, delta_p, size=(draws, d))
    rep.absorb(claim1_slack(lam, lam + noise, delta_p, eta, flip))
    rep.absorb(claim1_slack(lam, lam - delta_p, delta_p, eta, flip)[None])
    rep.absorb(claim1_slack(lam, lam + delta_p, delta_p, eta, flip)[None])
    # mass on one reciprocal, perturbation pushed onto that term
    s = 0.99 * s0
    eps = np.logspace(-9, -1, 9)[:, None]
    recip = np.concatenate([s * (1 - eps), np.broadcast_to(s * eps / max(d - 1, 1), (9, d - 1))], axis=1)
    heavy = 1 / recip
    for sign in (-1, 1):
        shifted = heavy.copy()
        shifted[:, 0] += sign * delta_p
        rep.absorb(claim1_slack(heavy, shifted, delta_p, eta, flip))
    gap = _simplex_extreme_gap(s, delta_p, min(draws * 10, 100_000), rng, max(d, 2))
    rep.details["simplex_worst_margin"] = float(gap.min())
    rep.details["simplex_samples"] = int(gap.size)
    rep.absorb(gap if not flip else -np.abs(gap) - 1)
    return rep


def certify_claim1(eta, delta_p=1.0, d=3, draws=10_000, seed=0, flip=False):
    """Reciprocal-sum bound certified over random base sequences with ``s <= s0``.

    Returns
    -------
    CheckReport
    """
    rng = np.random.default_rng(seed)
    s0 = claim1_s0(delta_p, eta)
    rep = CheckReport("claim1")
    # random base sequences: reciprocals from a scaled simplex, total in (0, s0]
    totals = s0 * rng.uniform(0.01, 1.0, draws)
    totals[: draws // 10] = 0.99 * s0
    recip = totals[:, None] * rng.dirichlet(np.ones(d), size=draws)
    recip = np.maximum(recip, 1e-300)
    lam = 1 / recip
    tilde = lam + rng.uniform(-delta_p, delta_p, size=(draws, d))
    rep.absorb(claim1_slack(lam, tilde, delta_p, eta, flip))
    rep.absorb(claim1_slack(lam, lam - delta_p, delta_p, eta, flip))
    rep.absorb(claim1_slack(lam, lam + delta_p, delta_p, eta, flip))
    sub = check_claim1([1.0] * d, delta_p, eta, draws, seed + 1, flip)
    rep.checked += sub.checked
    rep.violations += sub.violations
    rep.worst_slack = min(rep.worst_slack, sub.worst_slack)
    rep.details.update(sub.details)
    # scalar case: the upper bound is tight exactly at lambda = (1+eta)/eta delta'
    lam1 = (1 + eta) / eta * delta_p
    rep.details["scalar_tight_ratio"] = (1 / (lam1 - delta_p)) / ((1 + eta) / lam1)
    return rep


# spectral perturbation of the information matrix


def pair_perturbation_norm(dist, delta):
    """Closed-form ``||S_delta - S_0||_2`` from the two eigenvalue gaps."""
    q, d2 = np.asarray(dist, float) ** 2, np.asarray(delta, float) ** 2
    perp = d2 / (q * (q + d2))
    along = d2**2 / (q + d2) ** 3
    return np.maximum(perp, along)


def claim2_slacks(x, landmarks, model, zeta):
    """Relative margins of the three perturbation inequalities, batched.

    Parameters
    ----------
    x : (K, 3)
    landmarks : (K, M, 3)
    model : MeasurementModel
        Its ``delta`` may be replaced by a (K,) array through ``deltas``.
    zeta : float

    Returns
    -------
    dict of arrays ``total``, ``pair`` (K, M) and ``weyl``.
    """
    return _claim2(np.asarray(x, float), np.asarray(landmarks, float), model, np.full(len(x), model.delta), zeta)


def _claim2(X, Z, model, deltas, zeta):
    r = Z - X[:, None, :]
    dist = np.linalg.norm(r, axis=-1)
    S0 = pair_info_batch(r, 0.0)
    Sd = pair_info_batch(r, deltas[:, None])
    pair_norm = np.abs(np.linalg.eigvalsh(Sd - S0)).max(-1)
    pair_bound = 1 / (dist**2 * (1 + zeta**2))
    w = model.noise_info
    D = w * (Sd - S0).sum(axis=1)
    total = np.abs(np.linalg.eigvalsh(D)).max(-1)
    M = Z.shape[1]
    total_bound = M * w / (dist.min(-1) ** 2 * (1 + zeta**2))
    J0 = model.prior_info + w * S0.sum(axis=1)
    Jd = J0 + D
    weyl = np.abs(np.linalg.eigvalsh(Jd) - np.linalg.eigvalsh(J0)).max(-1)
    tiny = 1e-14
    return {
        "total": (total_bound - total) / total_bound,
        "pair": (pair_bound - pair_norm) / pair_bound,
        "weyl": (total - weyl + tiny * np.abs(Jd).max((-1, -2))) / np.maximum(total, tiny),
        "total_norm": total,
        "pair_norm": pair_norm,
    }


def check_claim2(x, landmarks, model, zeta):
    """Check the spectral bound, the per-pair bound and Weyl's inequality at one point.

    Returns
    -------
    dict with ``applicable``, the three slacks and ``ok``.
    """
    x = np.asarray(x, float).reshape(1, 3)
    Z = np.asarray(landmarks, float).reshape(1, -1, 3)
    dist = np.linalg.norm(Z - x[:, None], axis=-1)
    applicable = bool(np.all(model.delta * zeta <= dist))
    out = _claim2(x, Z, model, np.array([model.delta]), zeta)
    slacks = {k: float(np.min(out[k])) for k in ("total", "pair", "weyl")}
    return {"applicable": applicable, **slacks, "norm": float(out["total_norm"][0]),
            "ok": min(slacks.values()) >= 0}


def certify_claim2(params, model, draws=10_000, seed=0, flip=False):
    """Randomized certification of the three perturbation inequalities.

    Returns
    -------
    CheckReport
    """
    rng = np.random.default_rng(seed)
    X, Z, deltas = sample_configs(params, model, rng, draws, dist_range=(1.0, 4.0))
    deltas = np.minimum(deltas, np.linalg.norm(Z, axis=-1).min(-1) / params.zeta)
    out = _claim2(X, Z, model, deltas, params.zeta)
    rep = CheckReport("claim2")
    for key in ("total", "pair", "weyl"):
        slack = out[key].min(-1) if out[key].ndim > 1 else out[key]
        rep.absorb(-slack - 1 if flip else slack)
        rep.details[f"worst_{key}"] = float(slack.min())
    # closed-form single-pair audit
    closed = pair_perturbation_norm(np.linalg.norm(Z[:, 0], axis=-1), deltas)
    rep.details["closed_form_max_abs_diff"] = float(np.abs(closed - out["pair_norm"][:, 0]).max())
    return rep


def composition_audit(params, model, draws=1000, seed=0):
    """Check that the bound assembled from both perturbation results contains the exact trace.

    For each configuration the measured spectral shift ``e`` gives the
    interval ``[sum 1/(lam_k + e), sum 1/(lam_k - e)]`` around the smoothed
    eigenvalues. The exact trace must lie inside it, and that interval must
    lie inside the coarser ``[s/(1+eta), s(1+eta)]`` when ``s <= s0``.

    Returns
    -------
    CheckReport
    """
    rng = np.random.default_rng(seed)
    X, Z, deltas = sample_configs(params, model, rng, draws)
    r = Z - X[:, None, :]
    w = model.noise_info
    J0 = model.prior_info + w * pair_info_batch(r, 0.0).sum(1)
    Jd = model.prior_info + w * pair_info_batch(r, deltas[:, None]).sum(1)
    e = np.abs(np.linalg.eigvalsh(Jd - J0)).max(-1)
    lam = np.linalg.eigvalsh(Jd)
    t0, s = trace_inv_sym3(J0), trace_inv_sym3(Jd)
    ok = lam.min(-1) > e
    lo = (1 / (lam + e[:, None])).sum(-1)
    hi = np.where(ok, (1 / np.where(ok[:, None], lam - e[:, None], 1)).sum(-1), np.inf)
    rep = CheckReport("composition")
    tol = 1e-12 * t0
    rep.absorb(np.minimum(t0 - lo + tol, hi - t0 + tol) / t0)
    inner = s <= params.s0
    coarse_lo, coarse_hi = s / (1 + params.eta), s * (1 + params.eta)
    rep.absorb(np.minimum(lo - coarse_lo, coarse_hi - hi)[inner] / s[inner] + 1e-12)
    rep.details["inner_checked"] = int(inner.sum())
    return rep


# corollary


def check_corollary(scenario, params, solver_cfg=None, evo_cfg=None, tiny_delta=None):
    """Compare the smoothed optimum against the best unsmoothed value found.

    The smoothed problem is solved with the scenario's own delta. The exact
    problem's optimum is estimated by the best of the evolutionary baseline,
    a multi-start solve at a tiny delta and the smoothed solution itself.

    Returns
    -------
    dict
        ``status`` is ``"ok"``, ``"violated"`` or ``"skipped"`` (with
        ``reason``), plus ``ratio`` and ``factor = (1+eta)^2``.
    """
    from .baselines import EvoConfig, evolve_place
    from .nlp import build_nlp, evaluate_placement
    from .solver import solve

    delta = scenario.model.delta
    if not 0 < delta < params.r_min / params.zeta * (1 + 1e-12):
        return {"status": "skipped", "reason": "delta outside (0, r_min/zeta)"}
    rep = solve(build_nlp(scenario), solver_cfg)
    v_delta = rep.objective
    if v_delta > params.s0:
        return {"status": "skipped", "reason": "no smoothed placement below s0", "v_delta": v_delta}
    exact = scenario.with_model(scenario.model.with_delta(0.0))
    v0_at_star = evaluate_placement(exact, rep.best.landmarks).max_cost
    candidates = {"smoothed_solution": v0_at_star}
    try:
        candidates["evolutionary"] = evolve_place(exact, evo_cfg or EvoConfig()).max_cost
    except Exception as exc:  # the reference only needs one candidate
        candidates["evolutionary_error"] = str(exc)
    tiny = tiny_delta if tiny_delta is not None else delta * 1e-3
    tiny_rep = solve(build_nlp(scenario.with_model(scenario.model.with_delta(tiny))), solver_cfg)
    candidates["tiny_delta_solver"] = evaluate_placement(exact, tiny_rep.best.landmarks).max_cost
    best = min(v for k, v in candidates.items() if not k.endswith("error"))
    ratio = v0_at_star / best
    factor = params.guarantee_factor
    sandwich = v_delta / (1 + params.eta) <= v0_at_star <= v_delta * (1 + params.eta)
    return {
        "status": "ok" if ratio <= factor and sandwich else "violated",
        "ratio": ratio, "factor": factor, "v_delta": v_delta, "v0_at_smoothed": v0_at_star,
        "v0_best": best, "candidates": candidates, "value_sandwich": bool(sandwich),
    }
