"""Epigraph form of the smoothed minimax placement problem.

Decision vector layout is ``[z_1, ..., z_M, t]`` followed by one heading
angle per setpoint when a field-of-view cone is configured. In that mode the
landmarks live on a horizontal plane and only their (x, y) coordinates are
free. All constraints are written as ``c(v) >= 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import MeasurementModel, batch_costs, setpoint_cost_derivatives
from .exceptions import InfeasibleScenarioError

FEASIBILITY_SAMPLES = 10_000
FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class FovSpec:
    """Horizontal viewing cone of full angle ``alpha`` (radians)."""

    alpha: float
    landmark_height: float = 0.0
    planar: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 2 * np.pi:
            raise ValueError("alpha must lie in (0, 2*pi)")
        if not self.planar:
            raise ValueError("only the planar field-of-view variant is supported")


@dataclass(frozen=True)
class Scenario:
    """Setpoints, landmark budget, placement radii and measurement model."""

    setpoints: np.ndarray
    n_landmarks: int
    r_min: float
    r_max: float
    model: MeasurementModel
    fov: Optional[FovSpec] = None
    seed: int = 0
    prior_overrides: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.setpoints, dtype=float).reshape(-1, 3)
        if len(X) < 1:
            raise ValueError("at least one setpoint is required")
        if not np.all(np.isfinite(X)):
            raise ValueError("setpoints must be finite")
        if int(self.n_landmarks) != self.n_landmarks or self.n_landmarks < 0:
            raise ValueError("n_landmarks must be a non-negative integer")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        X.setflags(write=False)
        object.__setattr__(self, "setpoints", X)
        object.__setattr__(self, "n_landmarks", int(self.n_landmarks))
        if self.prior_overrides is not None:
            P = np.array(self.prior_overrides, dtype=float)
            if P.shape != (len(X), 3, 3):
                raise ValueError("prior_overrides must have shape (N, 3, 3)")
            P = 0.5 * (P + np.swapaxes(P, -1, -2))
            if np.any(np.linalg.eigvalsh(P)[:, 0] <= 0):
                raise ValueError("prior overrides must be positive definite")
            P.setflags(write=False)
            object.__setattr__(self, "prior_overrides", P)
        outside = np.linalg.norm(X, axis=1) > self.r_max
        if np.any(outside):
            warnings.warn(
                f"{int(outside.sum())} setpoint(s) lie outside the r_max ball",
                stacklevel=2,
            )
        if self.fov is not None and abs(self.fov.landmark_height) >= self.r_max:
            raise ValueError("landmark_height must lie strictly inside the r_max ball")

    @property
    def N(self):
        return len(self.setpoints)

    @property
    def M(self):
        return self.n_landmarks

    @property
    def prior_info(self):
        """Prior information per setpoint, shape (3, 3) or (N, 3, 3)."""
        if self.prior_overrides is not None:
            return self.prior_overrides
        return self.model.prior_info

    def with_model(self, model):
        return Scenario(
            self.setpoints, self.M, self.r_min, self.r_max, model,
            self.fov, self.seed, self.prior_overrides,
        )

    def sample_landmark_positions(self, rng, n):
        """Uniform samples from the r_max ball (or its slice at the landmark height)."""
        if self.fov is None:
            u = rng.normal(size=(n, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            rad = self.r_max * rng.random(n) ** (1 / 3)
            return u * rad[:, None]
        h = self.fov.landmark_height
        rho = np.sqrt(self.r_max**2 - h**2)
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = rho * np.sqrt(rng.random(n))
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), np.full(n, h)])

    def check_feasible(self, samples=FEASIBILITY_SAMPLES):
        """Rejection-sample single-landmark positions; return the hit fraction.

        Raises
        ------
        InfeasibleScenarioError
            If no sample satisfies every separation constraint.
        """
        rng = np.random.default_rng(self.seed)
        pts = self.sample_landmark_positions(rng, samples)
        d2 = ((pts[:, None, :] - self.setpoints[None]) ** 2).sum(-1)
        hits = int(np.count_nonzero(d2.min(axis=1) >= self.r_min**2))
        if hits == 0:
            raise InfeasibleScenarioError(
                f"no feasible landmark position found in {samples} samples"
            )
        return hits / samples


@dataclass
class Placement:
    """Landmark positions with their per-setpoint costs and feasibility."""

    landmarks: np.ndarray
    per_setpoint_cost: np.ndarray
    max_cost: float
    feasible: bool
    max_violation: float
    headings: Optional[np.ndarray] = None


def fov_residual(n_angle, x, z, alpha, delta):
    """Cone margin ``n . d - cos(alpha/2) sqrt(|d|^2 + delta^2)`` on the horizontal plane.

    ``d`` is the (x, y) part of ``z - x``. Non-negative means the landmark is
    inside the cone around heading ``n_angle``.
    """
    d = (np.asarray(z, float) - np.asarray(x, float))[:2]
    n = np.array([np.cos(n_angle), np.sin(n_angle)])
    return float(n @ d - np.cos(alpha / 2) * np.sqrt(d @ d + delta**2))


def heading_margins(setpoints, landmarks, alpha, delta):
    """Best heading and worst-case cone margin per setpoint, batched.

    The worst margin over landmarks is the lower envelope of
    ``A_j cos(phi - theta_j) - B_j``; its maximum sits at a peak of one term
    or where two terms cross, so a finite candidate set suffices.

    Parameters
    ----------
    setpoints : (N, 3)
    landmarks : (..., M, 3) with M >= 1

    Returns
    -------
    angles, margins : arrays of shape (..., N)
    """
    Z = np.asarray(landmarks, float)
    X = np.asarray(setpoints, float)
    d = Z[..., None, :, :2] - X[:, None, :2]  # (..., N, M, 2)
    A = np.linalg.norm(d, axis=-1)
    B = np.cos(alpha / 2) * np.sqrt(A**2 + delta**2)
    theta = np.arctan2(d[..., 1], d[..., 0])
    ax, ay = A * np.cos(theta), A * np.sin(theta)
    P = ax[..., :, None] - ax[..., None, :]
    Q = ay[..., :, None] - ay[..., None, :]
    C = B[..., :, None] - B[..., None, :]
    R = np.hypot(P, Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.arctan2(Q, P)
        spread = np.arccos(np.clip(C / R, -1, 1))
    ok = (R > 0) & (R >= np.abs(C))
    shape = theta.shape[:-1] + (-1,)
    cross = np.concatenate([(base + spread).reshape(shape), (base - spread).reshape(shape)], axis=-1)
    cross_ok = np.concatenate([ok.reshape(shape), ok.reshape(shape)], axis=-1)
    phi = np.concatenate([theta, cross], axis=-1)
    valid = np.concatenate([np.ones(theta.shape, bool), cross_ok], axis=-1)
    env = (A[..., None, :] * np.cos(phi[..., :, None] - theta[..., None, :]) - B[..., None, :]).min(axis=-1)
    env = np.where(valid, env, -np.inf)
    k = np.argmax(env, axis=-1)
    angles = np.take_along_axis(phi, k[..., None], axis=-1)[..., 0]
    margins = np.take_along_axis(env, k[..., None], axis=-1)[..., 0]
    return np.mod(angles, 2 * np.pi), margins


def best_headings(scenario, landmarks):
    """Heading angle per setpoint maximizing the worst cone margin.

    Returns
    -------
    angles : (N,) array
    margins : (N,) array, best achievable worst-case margin per setpoint
    """
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    if len(Z) == 0:
        return np.zeros(scenario.N), np.full(scenario.N, np.inf)
    return heading_margins(scenario.setpoints, Z, scenario.fov.alpha, scenario.model.delta)


def constraint_violation(scenario, landmarks):
    """Largest violation (metres) of the ball, separation and cone constraints."""
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    if len(Z) == 0:
        return 0.0
    viol = [np.linalg.norm(Z, axis=1) - scenario.r_max]
    dist = np.linalg.norm(Z[None] - scenario.setpoints[:, None], axis=-1)
    viol.append((scenario.r_min - dist).ravel())
    if scenario.fov is not None:
        viol.append(np.abs(Z[:, 2] - scenario.fov.landmark_height))
        viol.append(-best_headings(scenario, Z)[1])
    return float(max(0.0, max(v.max() for v in viol)))


def evaluate_placement(scenario, landmarks):
    """Per-setpoint costs, worst-case cost and feasibility of a landmark set."""
    Z = np.asarray(landmarks, dtype=float).reshape(-1, 3)
    if len(Z) != scenario.M:
        raise ValueError(f"expected {scenario.M} landmarks, got {len(Z)}")
    costs = batch_costs(scenario.setpoints, Z, scenario.model, scenario.prior_info)
    violation = constraint_violation(scenario, Z)
    headings = None
    if scenario.fov is not None:
        ang = best_headings(scenario, Z)[0]
        headings = np.column_stack([np.cos(ang), np.sin(ang)])
    return Placement(
        landmarks=Z.copy(),
        per_setpoint_cost=costs,
        max_cost=float(costs.max()),
        feasible=violation <= FEASIBILITY_TOL,
        max_violation=violation,
        headings=headings,
    )


class NlpInstance:
    """Smooth NLP ``min t  s.t.  c(v) >= 0`` with exact derivatives.

    Constraint order: N epigraph, M ball, N*M separation (setpoint-major),
    then N*M cone constraints in field-of-view mode. Ball and separation
    constraints use squared distances.
    """

    def __init__(self, scenario):
        self.scenario = scenario
        self.N, self.M = scenario.N, scenario.M
        self.fov = scenario.fov
        self.zdim = 2 if self.fov is not None else 3
        self.t_index = self.zdim * self.M
        self.n = self.t_index + 1 + (self.N if self.fov is not None else 0)
        kinds = ["epigraph"] * self.N + ["ball"] * self.M + ["separation"] * (self.N * self.M)
        if self.fov is not None:
            kinds += ["fov"] * (self.N * self.M)
        self.kinds = np.array(kinds)
        self.m = len(kinds)
        self._cache_key = None
        self._cache = None
        # slices into the constraint vector
        self._ball0 = self.N
        self._sep0 = self.N + self.M
        self._fov0 = self._sep0 + self.N * self.M

    @property
    def dimension(self):
        return self.n

    # layout helpers

    def landmarks(self, v):
        v = np.asarray(v, float)
        zs = v[: self.t_index].reshape(self.M, self.zdim)
        if self.fov is None:
            return zs
        return np.column_stack([zs, np.full(self.M, self.fov.landmark_height)])

    def headings(self, v):
        return None if self.fov is None else np.asarray(v, float)[self.t_index + 1 :]

    def pack(self, landmarks, t, headings=None):
        Z = np.asarray(landmarks, float).reshape(self.M, 3)
        parts = [Z[:, : self.zdim].ravel(), [t]]
        if self.fov is not None:
            if headings is None:
                headings = best_headings(self.scenario, Z)[0]
            parts.append(np.asarray(headings, float))
        return np.concatenate(parts)

    # objective

    def objective(self, v):
        return float(v[self.t_index])

    def objective_grad(self, v):
        g = np.zeros(self.n)
        g[self.t_index] = 1.0
        return g

    # constraints

    def _zcols(self):
        """Columns of the 3M landmark gradient that map to decision variables."""
        return np.array([3 * j + k for j in range(self.M) for k in range(self.zdim)], dtype=int)

    def _derivs(self, v, hessian):
        Z = self.landmarks(v)
        key = (Z.tobytes(), hessian)
        cached = self._cache_key
        if cached is None or cached[0] != key[0] or (hessian and not cached[1]):
            sc = self.scenario
            vals, grads, hess = setpoint_cost_derivatives(
                sc.setpoints, Z, sc.model, sc.prior_info, hessian=hessian
            )
            cols = self._zcols()
            grads = grads[:, cols]
            if hess is not None:
                hess = hess[:, cols][:, :, cols]
            self._cache_key = key
            self._cache = (vals, grads, hess)
        return self._cache

    def _fov_parts(self, v):
        Z = self.landmarks(v)
        phi = self.headings(v)
        d = Z[None, :, :2] - self.scenario.setpoints[:, None, :2]  # (N, M, 2)
        rho = np.sqrt((d**2).sum(-1) + self.scenario.model.delta**2)
        rho = np.maximum(rho, 1e-12)
        n = np.stack([np.cos(phi), np.sin(phi)], axis=-1)  # (N, 2)
        dn = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
        return d, rho, n, dn

    def constraints(self, v):
        v = np.asarray(v, float)
        Z = self.landmarks(v)
        sc = self.scenario
        costs = batch_costs(sc.setpoints, Z, sc.model, sc.prior_info)
        t = v[self.t_index]
        out = [t - costs, sc.r_max**2 - (Z**2).sum(1)]
        diff = Z[None] - sc.setpoints[:, None]
        out.append(((diff**2).sum(-1) - sc.r_min**2).ravel())
        if self.fov is not None:
            d, rho, n, _ = self._fov_parts(v)
            res = np.einsum("nk,nmk->nm", n, d) - np.cos(self.fov.alpha / 2) * rho
            out.append(res.ravel())
        return np.concatenate(out)

    def jacobian(self, v):
        v = np.asarray(v, float)
        sc = self.scenario
        Z = self.landmarks(v)
        zd = self.zdim
        Jc = np.zeros((self.m, self.n))
        _, grads, _ = self._derivs(v, hessian=False)
        Jc[: self.N, : self.t_index] = -grads
        Jc[: self.N, self.t_index] = 1.0
        for j in range(self.M):
            Jc[self._ball0 + j, zd * j : zd * j + zd] = -2 * Z[j, :zd]
        diff = Z[None] - sc.setpoints[:, None]  # (N, M, 3)
        ii, jj = np.meshgrid(np.arange(self.N), np.arange(self.M), indexing="ij")
        rows = (self._sep0 + ii * self.M + jj).ravel()
        for k in range(zd):
            Jc[rows, (zd * jj + k).ravel()] = 2 * diff[:, :, k].ravel()
        if self.fov is not None:
            d, rho, n, dn = self._fov_parts(v)
            ch = np.cos(self.fov.alpha / 2)
            rows = (self._fov0 + ii * self.M + jj).ravel()
            g = n[:, None, :] - ch * d / rho[..., None]
            for k in range(2):
                Jc[rows, (2 * jj + k).ravel()] = g[:, :, k].ravel()
            Jc[rows, (self.t_index + 1 + ii).ravel()] = np.einsum("nk,nmk->nm", dn, d).ravel()
        return Jc

    def hessian(self, v, weights):
        """Weighted sum ``sum_k w_k * Hess c_k(v)``."""
        v = np.asarray(v, float)
        w = np.asarray(weights, float)
        zd = self.zdim
        H = np.zeros((self.n, self.n))
        nz = self.t_index
        _, _, hess = self._derivs(v, hessian=True)
        H[:nz, :nz] -= np.einsum("i,iab->ab", w[: self.N], hess)
        wb = w[self._ball0 : self._sep0]
        ws = w[self._sep0 : self._fov0].reshape(self.N, self.M).sum(axis=0)
        for j in range(self.M):
            sl = slice(zd * j, zd * j + zd)
            H[sl, sl] += (2 * ws[j] - 2 * wb[j]) * np.eye(zd)
        if self.fov is not None:
            d, rho, n, dn = self._fov_parts(v)
            ch = np.cos(self.fov.alpha / 2)
            wf = w[self._fov0 :].reshape(self.N, self.M)
            for i in range(self.N):
                p = self.t_index + 1 + i
                for j in range(self.M):
                    wk = wf[i, j]
                    if wk == 0:
                        continue
                    sl = slice(2 * j, 2 * j + 2)
                    dd = d[i, j]
                    r = rho[i, j]
                    H[sl, sl] -= wk * ch * (np.eye(2) / r - np.outer(dd, dd) / r**3)
                    H[p, p] -= wk * (n[i] @ dd)
                    H[sl, p] += wk * dn[i]
                    H[p, sl] += wk * dn[i]
        return H

    def prepare(self, v):
        """Evaluate and cache cost derivatives up to second order at ``v``."""
        self._derivs(np.asarray(v, float), hessian=True)

    def constraint_hessian(self, v, k):
        w = np.zeros(self.m)
        w[k] = 1.0
        return self.hessian(v, w)

    def placement(self, v):
        return evaluate_placement(self.scenario, self.landmarks(v))


def build_nlp(scenario):
    """Assemble the epigraph NLP after confirming the feasible set is non-empty."""
    scenario.check_feasible()
    return NlpInstance(scenario)


def check_derivatives(nlp, v, step=1e-6):
    """Largest row-wise relative errors of the Jacobian and constraint Hessians
    against central differences.

    Returns
    -------
    (jac_err, hess_err) : tuple of float
    """
    v = np.asarray(v, float)
    n = nlp.n
    Jc = nlp.jacobian(v)
    fd = np.empty_like(Jc)
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        fd[:, a] = (nlp.constraints(v + e) - nlp.constraints(v - e)) / (2 * step)
    jac_err = _row_rel_err(Jc, fd)
    hess_err = 0.0
    fdj = np.empty((nlp.m, n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        fdj[:, :, a] = (nlp.jacobian(v + e) - nlp.jacobian(v - e)) / (2 * step)
    for k in range(nlp.m):
        hess_err = max(hess_err, _row_rel_err(nlp.constraint_hessian(v, k).ravel()[None], fdj[k].ravel()[None]))
    return jac_err, hess_err


def _row_rel_err(a, b):
    scale = np.maximum(np.abs(b).max(axis=1), 1e-8)
    return float((np.abs(a - b).max(axis=1) / scale).max())
