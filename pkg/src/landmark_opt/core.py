"""Bearing measurement model, information matrices and trace-of-inverse costs.

Everything here is a pure function of numpy arrays. The per-pair information
contribution of a landmark at displacement ``r = z - x`` has the closed form

    S(r) = a(q) I + b(q) r r^T,   q = |r|^2,
    a(q) = 1 / (q + d),           b(q) = -(q + 2 d) / (q + d)^3,   d = delta^2,

so first and second derivatives with respect to the landmark follow by
differentiating ``a`` and ``b`` in ``q`` and applying the product rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateGeometryError

_EYE = np.eye(3)
# distance below which an unsmoothed bearing is undefined
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class MeasurementModel:
    """Bearing noise, prior information and smoothing length.

    Parameters
    ----------
    sigma_m : float
        Standard deviation of each bearing component.
    prior_info : array-like, shape (3, 3)
        Prior information matrix (inverse prior covariance), in 1/m^2.
    delta : float
        Smoothing length in meters. ``0`` gives the exact bearing model.
    """

    sigma_m: float
    prior_info: np.ndarray = field(default_factory=lambda: np.eye(3) / 30.0)
    delta: float = 0.0

    def __post_init__(self):
        prior = np.array(self.prior_info, dtype=float)
        if prior.shape != (3, 3) or not np.all(np.isfinite(prior)):
            raise ValueError("prior_info must be a finite 3x3 matrix")
        prior = 0.5 * (prior + prior.T)
        if np.linalg.eigvalsh(prior)[0] <= 0:
            raise ValueError("prior_info must be positive definite")
        if not self.sigma_m > 0:
            raise ValueError("sigma_m must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        prior.setflags(write=False)
        object.__setattr__(self, "prior_info", prior)
        object.__setattr__(self, "sigma_m", float(self.sigma_m))
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def isotropic(cls, sigma_m, prior_var=30.0, delta=0.0):
        """Model with prior covariance ``prior_var * I``."""
        return cls(sigma_m, np.eye(3) / prior_var, delta)

    def with_delta(self, delta):
        return MeasurementModel(self.sigma_m, self.prior_info, delta)

    @property
    def noise_info(self):
        return self.sigma_m**-2


@dataclass(frozen=True)
class InfoMatrix:
    J: np.ndarray
    is_pd: bool


@dataclass(frozen=True)
class DerivBundle:
    """Value, gradient and Hessian of ``tr(J^-1)`` in the landmark coordinates."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


def _as_points(points, name):
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.shape[-1] != 3:
        raise ValueError(f"{name} must have a trailing dimension of 3")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _check_degenerate(sq_dist, delta):
    if delta > 0:
        return
    bad = np.argwhere(np.atleast_1d(sq_dist) < DEGENERACY_TOL**2)
    if bad.size:
        index = tuple(int(i) for i in bad[0])
        raise DegenerateGeometryError(
            f"landmark coincides with setpoint (index {index}) and delta = 0",
            index=index,
        )


def _shape_coeffs(q, d2, order):
    """``a, b`` and their ``q``-derivatives up to ``order``."""
    s = q + d2
    inv = 1.0 / s
    coeffs = [inv, -(q + 2 * d2) * inv**3]
    if order >= 1:
        coeffs += [-(inv**2), (2 * q + 5 * d2) * inv**4]
    if order >= 2:
        coeffs += [2 * inv**3, -6 * (q + 3 * d2) * inv**5]
    return coeffs


def inv_sym3(A):
    """Batched inverse of symmetric 3x3 matrices by the adjugate formula."""
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    d, e, f = A[..., 1, 1], A[..., 1, 2], A[..., 2, 2]
    c00 = d * f - e * e
    c01 = c * e - b * f
    c02 = b * e - c * d
    c11 = a * f - c * c
    c12 = b * c - a * e
    c22 = a * d - b * b
    det = a * c00 + b * c01 + c * c02
    adj = np.stack(
        [
            np.stack([c00, c01, c02], axis=-1),
            np.stack([c01, c11, c12], axis=-1),
            np.stack([c02, c12, c22], axis=-1),
        ],
        axis=-2,
    )
    return adj / det[..., None, None]


def trace_inv_sym3(A):
    """Batched ``tr(A^-1)`` for symmetric 3x3 matrices."""
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    d, e, f = A[..., 1, 1], A[..., 1, 2], A[..., 2, 2]
    c00 = d * f - e * e
    c11 = a * f - c * c
    c22 = a * d - b * b
    det = a * c00 + b * (c * e - b * f) + c * (b * e - c * d)
    return (c00 + c11 + c22) / det


def pair_info_batch(r, delta):
    """``S^delta`` for displacements ``r`` of shape (..., 3)."""
    q = np.einsum("...i,...i->...", r, r)
    a, b = _shape_coeffs(q, delta**2, 0)
    return a[..., None, None] * _EYE + b[..., None, None] * (r[..., :, None] * r[..., None, :])


def smoothed_bearing(x, z, delta):
    """Direction from ``x`` to ``z`` divided by ``sqrt(|z - x|^2 + delta^2)``."""
    r = _as_points(z, "z") - _as_points(x, "x")
    q = float(r @ r)
    _check_degenerate(np.array(q), delta)
    return r / np.sqrt(q + delta**2)


def pair_info(x, z, delta):
    """Information contributed by one landmark before noise scaling.

    Equals ``G^T G`` where ``G`` is the Jacobian of the smoothed bearing with
    respect to the observer position.
    """
    r = _as_points(z, "z") - _as_points(x, "x")
    _check_degenerate(np.array(r @ r), delta)
    return pair_info_batch(r, delta)


def _prior_for(model, prior_info):
    return model.prior_info if prior_info is None else np.asarray(prior_info, dtype=float)


def total_info(x, landmarks, model, prior_info=None):
    """Prior plus noise-scaled sum of per-landmark information at ``x``."""
    x = _as_points(x, "x")
    Z = _as_points(landmarks, "landmarks").reshape(-1, 3)
    J = _prior_for(model, prior_info).copy()
    if len(Z):
        r = Z - x
        q = np.einsum("ij,ij->i", r, r)
        try:
            _check_degenerate(q, model.delta)
        except DegenerateGeometryError as err:
            raise DegenerateGeometryError(str(err), index=err.index[0]) from None
        J = J + model.noise_info * pair_info_batch(r, model.delta).sum(axis=0)
    J = 0.5 * (J + J.T)
    is_pd = bool(np.linalg.eigvalsh(J)[0] > 0)
    return InfoMatrix(J, is_pd)


def localization_cost(x, landmarks, model, prior_info=None):
    """Trace of the posterior covariance ``tr(J^-1)`` at ``x``."""
    return float(trace_inv_sym3(total_info(x, landmarks, model, prior_info).J))


def batch_costs(setpoints, landmarks, model, prior_info=None, check=True):
    """Costs at every setpoint for one or many landmark sets.

    Parameters
    ----------
    setpoints : array, shape (N, 3)
    landmarks : array, shape (..., M, 3)
    prior_info : array, shape (3, 3) or (N, 3, 3), optional
        Overrides ``model.prior_info``.
    check : bool
        Raise on degenerate pairs. When False, degenerate sets get ``inf``.

    Returns
    -------
    costs : array, shape (..., N)
    """
    X = _as_points(setpoints, "setpoints").reshape(-1, 3)
    Z = np.asarray(landmarks, dtype=float)
    prior = _prior_for(model, prior_info)
    if Z.shape[-2] == 0:
        J = np.broadcast_to(prior, Z.shape[:-2] + (len(X), 3, 3))
        return trace_inv_sym3(J)
    r = Z[..., None, :, :] - X[:, None, :]  # (..., N, M, 3)
    q = np.einsum("...i,...i->...", r, r)
    if check:
        _check_degenerate(q, model.delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        J = prior + model.noise_info * pair_info_batch(r, model.delta).sum(axis=-3)
        costs = trace_inv_sym3(J)
    if not check:
        costs = np.where(np.isfinite(costs) & (costs > 0), costs, np.inf)
    return costs


def _pair_jacobian(r, coeffs):
    """``dS/dr_k`` for every pair, shape (..., 3, 3, 3) indexed [k, p, q]."""
    b, a1, b1 = coeffs[1], coeffs[2], coeffs[3]
    rr = r[..., :, None] * r[..., None, :]
    base1 = a1[..., None, None] * _EYE + b1[..., None, None] * rr
    # sym[k] = e_k r^T + r e_k^T
    sym = np.einsum("kp,...q->...kpq", _EYE, r)
    sym = sym + np.swapaxes(sym, -1, -2)
    return 2 * r[..., :, None, None] * base1[..., None, :, :] + b[..., None, None, None] * sym


def setpoint_cost_derivatives(setpoints, landmarks, model, prior_info=None, hessian=True):
    """Cost, gradient and Hessian at every setpoint w.r.t. all landmark coordinates.

    The curvature term ``tr(P^2 d2S/dr_k dr_l)`` is contracted in closed form
    through ``tr(P^2)``, ``r^T P^2 r`` and ``P^2 r``; only first derivatives of
    ``S`` are materialized.

    Returns
    -------
    values : (N,)
    grads : (N, 3M)
    hess : (N, 3M, 3M) or None
    """
    X = _as_points(setpoints, "setpoints").reshape(-1, 3)
    Z = _as_points(landmarks, "landmarks").reshape(-1, 3)
    N, M = len(X), len(Z)
    prior = _prior_for(model, prior_info)
    if M == 0:
        J = np.broadcast_to(prior, (N, 3, 3))
        vals = trace_inv_sym3(J)
        return vals, np.zeros((N, 0)), (np.zeros((N, 0, 0)) if hessian else None)
    r = Z[None, :, :] - X[:, None, :]  # (N, M, 3)
    q = np.einsum("...i,...i->...", r, r)
    _check_degenerate(q, model.delta)
    w = model.noise_info
    coeffs = _shape_coeffs(q, model.delta**2, 2 if hessian else 1)
    a, b, a1, b1 = coeffs[:4]
    rr = r[..., :, None] * r[..., None, :]
    J = prior + w * (a[..., None, None] * _EYE + b[..., None, None] * rr).sum(axis=1)
    P = inv_sym3(J)
    P2 = P @ P
    values = np.trace(P, axis1=-2, axis2=-1)
    T = np.trace(P2, axis1=-2, axis2=-1)[:, None]  # (N, 1)
    u = np.einsum("npq,nmq->nmp", P2, r)  # P^2 r
    s = np.einsum("nmp,nmp->nm", r, u)  # r^T P^2 r
    lin = a1 * T + b1 * s
    grads = (-w * (2 * r * lin[..., None] + 2 * b[..., None] * u)).reshape(N, 3 * M)
    if not hessian:
        return values, grads, None
    a2, b2 = coeffs[4], coeffs[5]
    D = (w * _pair_jacobian(r, coeffs)).reshape(N, 3 * M, 9)
    PD = (P[:, None] @ D.reshape(N, 3 * M, 3, 3)).reshape(N, 3 * M, 9)
    P2D = (P2[:, None] @ D.reshape(N, 3 * M, 3, 3))
    P2D_T = np.swapaxes(P2D, -1, -2).reshape(N, 3 * M, 9)
    # tr(P2 Da P Db) = sum_pq (P2 Da)_pq (P Db)_qp
    hess = 2 * P2D_T @ np.swapaxes(PD, -1, -2)
    quad = a2 * T + b2 * s
    curv = (
        2 * lin[..., None, None] * _EYE
        + 4 * quad[..., None, None] * rr
        + 4 * b1[..., None, None] * (r[..., :, None] * u[..., None, :] + u[..., :, None] * r[..., None, :])
        + 2 * b[..., None, None] * P2[:, None]
    )
    for j in range(M):
        hess[:, 3 * j : 3 * j + 3, 3 * j : 3 * j + 3] -= w * curv[:, j]
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return values, grads, hess


def cost_derivatives(x, landmarks, model, prior_info=None):
    """Exact gradient and Hessian of ``tr(J^-1)`` in the 3M landmark coordinates."""
    x = _as_points(x, "x").reshape(1, 3)
    values, grads, hess = setpoint_cost_derivatives(x, landmarks, model, prior_info)
    return DerivBundle(float(values[0]), grads[0], hess[0])
