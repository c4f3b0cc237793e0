"""Simulation helpers: noisy bearings, EKF fixes, drift missions, setpoint generators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import MeasurementModel, _check_degenerate, total_info


def sample_bearing(x_true, z, model, rng):
    """Unit bearing from ``x_true`` to ``z`` plus isotropic Gaussian noise.

    Raises
    ------
    DegenerateGeometryError
        If the two points coincide.
    """
    r = np.asarray(z, float) - np.asarray(x_true, float)
    q = float(r @ r)
    _check_degenerate(np.array([q]), 0.0)
    return r / np.sqrt(q) + model.sigma_m * rng.normal(size=3)


def _bearing_and_jacobian(x, Z, delta):
    """Predicted bearings (M, 3) and their Jacobians w.r.t. ``x`` (M, 3, 3)."""
    r = Z - x
    q = np.einsum("ij,ij->i", r, r)
    _check_degenerate(q, delta)
    s = np.sqrt(q + delta**2)
    h = r / s[:, None]
    H = -(np.eye(3) / s[:, None, None] - r[:, :, None] * r[:, None, :] / s[:, None, None] ** 3)
    return h, H


@dataclass
class EkfGain:
    """One linearized update, reusable for many measurement draws."""

    prior_mean: np.ndarray
    predicted: np.ndarray  # stacked predicted bearings, (3M,)
    gain: np.ndarray  # (3, 3M)
    posterior_cov: np.ndarray

    def apply(self, measurements):
        """Posterior means for stacked measurements of shape (..., 3M)."""
        return self.prior_mean + (np.asarray(measurements) - self.predicted) @ self.gain.T


def ekf_gain(prior_mean, prior_cov, landmarks, model):
    """Kalman gain and posterior covariance for bearings to ``landmarks``.

    The linearization point is ``prior_mean`` and the measurement function is
    the model's smoothed bearing, so the posterior information equals
    ``total_info`` there. The covariance uses the Joseph form.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the innovation covariance is not positive definite.
    """
    m = np.asarray(prior_mean, float).reshape(3)
    P = np.asarray(prior_cov, float).reshape(3, 3)
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    if len(Z) == 0:
        return EkfGain(m, np.zeros(0), np.zeros((3, 0)), P.copy())
    h, H = _bearing_and_jacobian(m, Z, model.delta)
    H = H.reshape(-1, 3)
    R = model.sigma_m**2 * np.eye(len(H))
    S = H @ P @ H.T + R
    K = cho_solve(cho_factor(S), H @ P).T
    A = np.eye(3) - K @ H
    post = A @ P @ A.T + K @ R @ K.T
    return EkfGain(m, h.ravel(), K, 0.5 * (post + post.T))


def ekf_update(prior_mean, prior_cov, bearings, model):
    """Single linearized Gauss update from bearing measurements.

    Parameters
    ----------
    prior_mean : (3,)
    prior_cov : (3, 3)
    bearings : list of (measurement, landmark) pairs
    model : MeasurementModel

    Returns
    -------
    mean, cov
    """
    bearings = list(bearings)
    if not bearings:
        return np.asarray(prior_mean, float).copy(), np.asarray(prior_cov, float).copy()
    Y = np.array([b[0] for b in bearings], float)
    Z = np.array([b[1] for b in bearings], float)
    g = ekf_gain(prior_mean, prior_cov, Z, model)
    return g.apply(Y.ravel()), g.posterior_cov


def information_posterior(prior_mean, prior_cov, landmarks, model):
    """Posterior covariance computed in information form."""
    J = total_info(prior_mean, landmarks, model, prior_info=np.linalg.inv(prior_cov)).J
    return np.linalg.inv(J)


# Monte Carlo covariance validation


def standard_fix_scenario(sigma_m=0.05):
    """Single observer with unit prior covariance and four landmarks about 10 m away.

    Returns
    -------
    prior_mean, prior_cov, landmarks, model
    """
    tetra = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) / np.sqrt(3)
    landmarks = 10.0 * tetra + np.array([0.0, 0.0, 2.0])
    return np.array([0.0, 0.0, 2.0]) + np.array([0.3, -0.2, 0.1]), np.eye(3), landmarks, \
        MeasurementModel.isotropic(sigma_m, prior_var=1.0)


def monte_carlo_covariance(prior_mean, prior_cov, landmarks, model, trials=100_000, seed=0,
                           chunk=20_000):
    """Empirical mean squared error of one EKF fix against its predicted trace.

    Truth is drawn from the prior; bearings use the unsmoothed model with
    Gaussian noise.

    Returns
    -------
    dict with ``predicted_trace``, ``empirical_mse`` and ``relative_error``.
    """
    rng = np.random.default_rng(seed)
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    g = ekf_gain(prior_mean, prior_cov, Z, model)
    L = np.linalg.cholesky(prior_cov)
    sq = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        truth = prior_mean + rng.normal(size=(n, 3)) @ L.T
        r = Z[None] - truth[:, None]
        y = r / np.linalg.norm(r, axis=-1, keepdims=True)
        y = y + model.sigma_m * rng.normal(size=y.shape)
        est = g.apply(y.reshape(n, -1))
        sq += float(((est - truth) ** 2).sum())
        done += n
    mse = sq / trials
    pred = float(np.trace(g.posterior_cov))
    return {"predicted_trace": pred, "empirical_mse": mse, "relative_error": abs(pred - mse) / mse}


# drift missions


@dataclass
class Mission:
    """Waypoint path flown at constant speed with noisy odometry.

    Parameters
    ----------
    waypoints : (K, 3) array, K >= 2
    speed : float
        Metres per step duration ``dt``.
    odom_noise : float
        Standard deviation of the per-step translation error (m).
    bearing_fix_interval : int
        Steps between bearing updates.
    rng_seed : int
    dt : float
    fov_alpha : float, optional
        Full horizontal cone angle (radians) of the camera; ``None`` means
        bearings are omnidirectional.
    yaw_plan : tuple of arrays, optional
        ``(setpoints (K, 3), angles (K,))``. At a fix the camera points along
        the planned angle of the nearest setpoint; without a plan it points
        along the direction of travel.
    """

    waypoints: np.ndarray
    speed: float = 1.0
    odom_noise: float = 0.05
    bearing_fix_interval: int = 10
    rng_seed: int = 0
    dt: float = 1.0
    fov_alpha: Optional[float] = None
    yaw_plan: Optional[tuple] = None

    def __post_init__(self):
        W = np.asarray(self.waypoints, float).reshape(-1, 3)
        if len(W) < 2:
            raise ValueError("a mission needs at least two waypoints")
        if not (self.speed > 0 and self.dt > 0):
            raise ValueError("speed and dt must be positive")
        if int(self.bearing_fix_interval) < 1:
            raise ValueError("bearing_fix_interval must be a positive integer")
        if self.odom_noise < 0:
            raise ValueError("odom_noise must be non-negative")
        self.waypoints = W
        self.bearing_fix_interval = int(self.bearing_fix_interval)

    def with_seed(self, seed):
        return replace(self, rng_seed=seed)

    def camera_heading(self, k, pos, steps):
        """Unit horizontal viewing direction at step ``k``."""
        if self.yaw_plan is not None:
            pts, ang = self.yaw_plan
            a = ang[np.argmin(np.linalg.norm(np.asarray(pts) - pos, axis=1))]
            return np.array([np.cos(a), np.sin(a)])
        v = steps[k - 1, :2]
        n = np.linalg.norm(v)
        return v / n if n > 0 else np.array([1.0, 0.0])

    def path(self):
        """True positions at every step, including start and end."""
        return discretize_trajectory(self.waypoints, self.speed * self.dt)


@dataclass
class DriftReport:
    """Final position error with and without bearing fixes on one noise realization."""

    final_drift_with: float
    final_drift_without: float
    drift_reduction: float
    drift_with_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drift_without_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fixes: int = 0


def _visible(pos, heading, Z, alpha):
    if alpha is None:
        return np.ones(len(Z), bool)
    d = Z[:, :2] - pos[:2]
    n = np.linalg.norm(d, axis=1)
    cosang = (d @ heading) / np.where(n > 0, n, 1)
    return (n > 0) & (cosang >= np.cos(alpha / 2))


def run_drift_mission(mission, landmarks, model):
    """Dead-reckon along the mission with and without periodic bearing fixes.

    Both arms share one odometry noise stream; bearing noise comes from an
    independent stream so it cannot disturb the odometry draws.

    Returns
    -------
    DriftReport
    """
    Z = np.asarray(landmarks, float).reshape(-1, 3)
    truth = mission.path()
    steps = np.diff(truth, axis=0)
    odo_rng, bearing_rng = (np.random.default_rng(s) for s in
                            np.random.SeedSequence(mission.rng_seed).spawn(2))
    noise = mission.odom_noise * odo_rng.normal(size=steps.shape)
    measured = steps + noise
    q = mission.odom_noise**2
    without = truth[0].copy()

    mean = truth[0].copy()
    cov = np.zeros((3, 3))
    fixes = 0
    for k, d in enumerate(measured, start=1):
        mean = mean + d
        without = without + d
        cov = cov + q * np.eye(3)
        if len(Z) and k % mission.bearing_fix_interval == 0:
            pos = truth[k]
            heading = mission.camera_heading(k, pos, steps)
            vis = _visible(pos, heading, Z, mission.fov_alpha)
            if vis.any():
                obs = [(sample_bearing(pos, z, model, bearing_rng), z) for z in Z[vis]]
                mean, cov = ekf_update(mean, cov, obs, model.with_delta(0.0))
                fixes += 1
    err_with = mean - truth[-1]
    err_without = without - truth[-1]
    dw, dwo = float(np.linalg.norm(err_with)), float(np.linalg.norm(err_without))
    reduction = 0.0 if dwo == 0 else 1 - dw / dwo
    return DriftReport(dw, dwo, reduction, np.abs(err_with), np.abs(err_without), fixes)


def standard_mission(seed=0, side=30.0, altitude=5.0, rounds=3):
    """Square loop centred on the origin, flown ``rounds`` times."""
    h = side / 2
    corners = [[h, h], [-h, h], [-h, -h], [h, -h]]
    loop = [[x, y, altitude] for x, y in corners]
    pts = loop * rounds + [loop[0]]
    return Mission(np.array(pts, float), rng_seed=seed)


def mission_setpoints(mission, spacing):
    """Discretized mission path with repeated rounds collapsed to one copy."""
    pts = discretize_trajectory(mission.waypoints, spacing)
    _, first = np.unique(np.round(pts, 9), axis=0, return_index=True)
    return pts[np.sort(first)]


STANDARD_MISSION_PARAMS = dict(
    n_landmarks=3, r_min=2.0, r_max=30.0, sigma_m=0.1, prior_var=1.0, spacing=7.5
)


def standard_mission_scenario(mission=None):
    """Placement problem for the standard mission: three landmarks, sigma_m = 0.1."""
    from .nlp import Scenario

    p = STANDARD_MISSION_PARAMS
    mission = mission or standard_mission()
    X = mission_setpoints(mission, p["spacing"])
    model = MeasurementModel.isotropic(p["sigma_m"], prior_var=p["prior_var"])
    return Scenario(X, p["n_landmarks"], p["r_min"], p["r_max"], model)


def random_placement(mission, n_landmarks, r_min, rng, height=0.0, attempts=100_000):
    """Uniform landmark positions in the waypoints' bounding rectangle at ``height``.

    Candidates closer than ``r_min`` to the flown path are rejected.
    """
    W = mission.waypoints
    lo, hi = W[:, :2].min(0), W[:, :2].max(0)
    path = mission.path()
    out = []
    for _ in range(attempts):
        if len(out) == n_landmarks:
            break
        p = np.append(rng.uniform(lo, hi), height)
        if np.min(np.linalg.norm(path - p, axis=1)) >= r_min:
            out.append(p)
    if len(out) < n_landmarks:
        raise RuntimeError("could not sample a random placement clear of the path")
    return np.array(out)


DRIFT_SOURCES = ("optimized", "random", "none")


def _drift_one(args):
    mission, model, seed, sources, optimized, n_landmarks, r_min, height = args
    m = mission.with_seed(seed)
    rows = []
    for src in sources:
        if src == "optimized":
            Z = optimized
        elif src == "random":
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
            Z = random_placement(m, n_landmarks, r_min, rng, height)
        else:
            Z = np.zeros((0, 3))
        rep = run_drift_mission(m, Z, model)
        rows.append({
            "seed": seed, "mode": src, "drift_total_m": rep.final_drift_with,
            "drift_x": rep.drift_with_xyz[0], "drift_y": rep.drift_with_xyz[1],
            "drift_z": rep.drift_with_xyz[2], "reduction": rep.drift_reduction,
        })
    return rows


def drift_rows(mission, model, seeds, sources=DRIFT_SOURCES, optimized=None,
               n_landmarks=0, r_min=0.0, height=0.0, workers=1):
    """Paired drift runs: every source sees the same odometry noise for a seed.

    Random placements are drawn per seed from a stream independent of the
    mission noise. Rows come back in (seed, source) order whatever ``workers`` is.
    """
    if "optimized" in sources and optimized is None:
        raise ValueError("an optimized placement is required for the 'optimized' source")
    jobs = [(mission, model, int(s), tuple(sources), optimized, n_landmarks, r_min, height)
            for s in seeds]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_drift_one, jobs))
    else:
        parts = [_drift_one(j) for j in jobs]
    return [r for p in parts for r in p]


# setpoint generators


def discretize_trajectory(waypoints, spacing):
    """Arc-length-uniform samples along a polyline, both endpoints included.

    The count is ``floor(L / spacing) + 1`` for total length ``L``; the
    samples are evenly spread, so their gap is at least ``spacing``.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    W = np.asarray(waypoints, float).reshape(-1, 3)
    seg = np.linalg.norm(np.diff(W, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    L = cum[-1]
    n = int(np.floor(L / spacing + 1e-9)) + 1
    if n == 1:
        return W[:1].copy()
    s = np.linspace(0.0, L, n)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments when locating samples
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(seg[idx] > 0, (s - cum[idx]) / seg[idx], 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    out = W[idx] + frac[:, None] * (W[idx + 1] - W[idx])
    out[0], out[-1] = W[0], W[-1]
    return out


def sample_coverage(lower, upper, spacing, jitter=0.0, seed=0):
    """Grid samples over an axis-aligned box, optionally jittered.

    Parameters
    ----------
    lower, upper : (3,) box corners
    spacing : float
    jitter : float
        Fraction of ``spacing``; each point moves uniformly within
        ``+-jitter * spacing / 2`` per axis and is clipped to the box.
    seed : int
    """
    lo, hi = np.asarray(lower, float), np.asarray(upper, float)
    if not np.all(hi > lo):
        raise ValueError("box extents must be positive")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    axes = [l + spacing * np.arange(int(np.floor((h - l) / spacing + 1e-9)) + 1) for l, h in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    if jitter:
        rng = np.random.default_rng(seed)
        pts = pts + rng.uniform(-0.5, 0.5, pts.shape) * jitter * spacing
        pts = np.clip(pts, lo, hi)
    return pts
