"""Finite-difference audits of the analytic cost derivatives and NLP callbacks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import MeasurementModel, batch_costs, setpoint_cost_derivatives
from .nlp import Scenario, build_nlp, check_derivatives
from .solver import initialize_starts

GRAD_TOL = 1e-5
HESS_TOL = 1e-4
AUDIT_SIZES = ((1, 1), (4, 2), (10, 5))


@dataclass
class AuditResult:
    name: str
    N: int
    M: int
    points: int
    grad_err: float
    hess_err: float
    wall_time: float
    grad_tol: float = GRAD_TOL
    hess_tol: float = HESS_TOL

    @property
    def passed(self):
        return self.grad_err <= self.grad_tol and self.hess_err <= self.hess_tol

    def as_row(self):
        return {"audit": self.name, "N": self.N, "M": self.M, "points": self.points,
                "grad_err": self.grad_err, "hess_err": self.hess_err,
                "passed": self.passed}


def random_feasible_config(N, M, rng, radius=10.0, r_min=1.0, r_max=20.0):
    """Setpoints in a ball and landmarks at least ``r_min`` from every setpoint."""
    X = rng.uniform(-radius, radius, (N, 3))
    Z = np.empty((M, 3))
    k = 0
    while k < M:
        z = rng.uniform(-r_max, r_max, 3) / np.sqrt(3)
        if np.min(np.linalg.norm(X - z, axis=1)) >= r_min:
            Z[k] = z
            k += 1
    return X, Z


def _rel_err(a, b):
    """Largest absolute error per setpoint, scaled by that setpoint's largest reference entry."""
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    scale = np.maximum(np.abs(b).max(axis=1), 1e-12)
    return float((np.abs(a - b).max(axis=1) / scale).max())


def cost_derivative_audit(N, M, points=100, seed=0, sigma_m=0.1, delta=0.1, step=1e-5):
    """Analytic gradient and Hessian of every setpoint cost vs central differences.

    The gradient is compared with differences of cost values; the Hessian with
    differences of the (separately audited) analytic gradient.
    """
    rng = np.random.default_rng(seed)
    model = MeasurementModel.isotropic(sigma_m, delta=delta)
    n = 3 * M
    t0 = time.perf_counter()
    g_err = h_err = 0.0
    E = np.eye(n).reshape(n, M, 3) * step
    for _ in range(points):
        X, Z = random_feasible_config(N, M, rng)
        _, g, H = setpoint_cost_derivatives(X, Z, model)
        plus = batch_costs(X, Z + E, model)  # (n, N)
        minus = batch_costs(X, Z - E, model)
        g_fd = ((plus - minus) / (2 * step)).T
        g_err = max(g_err, _rel_err(g, g_fd))
        H_fd = np.empty_like(H)
        for k in range(n):
            gp = setpoint_cost_derivatives(X, Z + E[k], model, hessian=False)[1]
            gm = setpoint_cost_derivatives(X, Z - E[k], model, hessian=False)[1]
            H_fd[:, :, k] = (gp - gm) / (2 * step)
        h_err = max(h_err, _rel_err(H, 0.5 * (H_fd + np.swapaxes(H_fd, 1, 2))))
    return AuditResult("cost", N, M, points, g_err, h_err, time.perf_counter() - t0)


def nlp_derivative_audit(N, M, points=5, seed=0, sigma_m=0.1, delta=0.1, fov=None):
    """Constraint Jacobian and Hessians of the epigraph NLP at random strictly feasible points."""
    rng = np.random.default_rng(seed)
    model = MeasurementModel.isotropic(sigma_m, delta=delta)
    X, _ = random_feasible_config(N, M, rng)
    sc = Scenario(X, M, 1.0, 25.0, model, fov=fov, seed=seed)
    nlp = build_nlp(sc)
    t0 = time.perf_counter()
    g_err = h_err = 0.0
    for v in initialize_starts(sc, points, rng):
        jg, jh = check_derivatives(nlp, v)
        g_err, h_err = max(g_err, jg), max(h_err, jh)
    name = "nlp-fov" if fov is not None else "nlp"
    return AuditResult(name, N, M, points, g_err, h_err, time.perf_counter() - t0)


def run_all_audits(points=100, seed=0):
    """Every audit used by the ``deriv-check`` command."""
    from .nlp import FovSpec

    out = [cost_derivative_audit(N, M, points, seed) for N, M in AUDIT_SIZES]
    out.append(cost_derivative_audit(4, 2, max(points // 10, 1), seed, delta=0.0))
    out += [nlp_derivative_audit(N, M, seed=seed) for N, M in AUDIT_SIZES]
    out.append(nlp_derivative_audit(4, 2, seed=seed, fov=FovSpec(np.deg2rad(120))))
    return out
