"""scikit-learn style wrappers around the placement algorithms.

``fit(X)`` takes the setpoints as an ``(N, 3)`` array and places the
landmarks; ``predict(X)`` returns the localization cost ``tr(J^-1)`` of the
fitted placement at arbitrary query points.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import EvoConfig, GreedyConfig, evolve_place, greedy_place
from .core import MeasurementModel, batch_costs
from .nlp import FovSpec, Scenario, build_nlp, evaluate_placement
from .solver import SolverConfig, solve


class _PlacerBase(BaseEstimator):
    def _model(self):
        return MeasurementModel.isotropic(self.sigma_m, prior_var=self.prior_var, delta=self.delta)

    def _scenario(self, X):
        fov = None
        if self.fov_alpha_deg is not None:
            fov = FovSpec(math.radians(self.fov_alpha_deg), self.landmark_height)
        return Scenario(X, self.n_landmarks, self.r_min, self.r_max, self._model(), fov,
                        self.random_state)

    def _validate(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] != 3:
            raise ValueError(f"expected setpoints of shape (N, 3), got {X.shape}")
        return X

    def fit(self, X, y=None):
        """Place landmarks for the setpoints ``X`` of shape (N, 3)."""
        X = self._validate(X)
        scenario = self._scenario(X)
        self.placement_ = self._place(scenario)
        self.landmarks_ = self.placement_.landmarks
        self.headings_ = self.placement_.headings
        self.max_cost_ = self.placement_.max_cost
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        """``tr(J^-1)`` at each query point under the fitted placement.

        With a camera cone the heading at each point is chosen to see as many
        landmarks as possible, as in the placement problem.
        """
        check_is_fitted(self, "landmarks_")
        X = self._validate(X)
        if self.fov_alpha_deg is None:
            return batch_costs(X, self.landmarks_, self._model(), check=False)
        return evaluate_placement(self._scenario(X), self.landmarks_).per_setpoint_cost

    def score(self, X, y=None):
        """Negative worst-case cost, so that larger is better."""
        return -float(np.max(self.predict(X)))


class MinimaxPlacer(_PlacerBase):
    """Interior-point multi-start solution of the smoothed minimax problem.

    Parameters
    ----------
    n_landmarks : int
    r_min, r_max : float
        Separation radius around each setpoint and radius of the workspace ball.
    sigma_m : float
        Bearing noise standard deviation.
    prior_var : float
        Isotropic prior variance per setpoint.
    delta : float
        Smoothing length.
    fov_alpha_deg : float, optional
        Full horizontal camera cone; landmarks then sit at ``landmark_height``.
    landmark_height : float
    starts : int
    kkt_tol : float
    workers : int
    random_state : int

    Attributes
    ----------
    landmarks_ : ndarray (M, 3)
    headings_ : ndarray (N, 2) or None
    max_cost_ : float
    placement_ : Placement
    report_ : SolveReport
    """

    def __init__(self, n_landmarks=2, r_min=1.0, r_max=50.0, sigma_m=0.1, prior_var=30.0,
                 delta=0.0, fov_alpha_deg=None, landmark_height=0.0, starts=10, kkt_tol=1e-6,
                 workers=1, random_state=0):
        self.n_landmarks = n_landmarks
        self.r_min = r_min
        self.r_max = r_max
        self.sigma_m = sigma_m
        self.prior_var = prior_var
        self.delta = delta
        self.fov_alpha_deg = fov_alpha_deg
        self.landmark_height = landmark_height
        self.starts = starts
        self.kkt_tol = kkt_tol
        self.workers = workers
        self.random_state = random_state

    def _place(self, scenario):
        cfg = SolverConfig(kkt_tol=self.kkt_tol, starts=self.starts,
                           rng_seed=self.random_state, workers=self.workers)
        self.report_ = solve(build_nlp(scenario), cfg)
        return self.report_.best


class GreedyPlacer(_PlacerBase):
    """Sequential grid greedy baseline; ``grid_spacing=None`` means ``r_max / 20``."""

    def __init__(self, n_landmarks=2, r_min=1.0, r_max=50.0, sigma_m=0.1, prior_var=30.0,
                 delta=0.0, fov_alpha_deg=None, landmark_height=0.0, grid_spacing=None,
                 random_state=0):
        self.n_landmarks = n_landmarks
        self.r_min = r_min
        self.r_max = r_max
        self.sigma_m = sigma_m
        self.prior_var = prior_var
        self.delta = delta
        self.fov_alpha_deg = fov_alpha_deg
        self.landmark_height = landmark_height
        self.grid_spacing = grid_spacing
        self.random_state = random_state

    def _place(self, scenario):
        return greedy_place(scenario, GreedyConfig(self.grid_spacing))


class EvolutionaryPlacer(_PlacerBase):
    """Stochastic-ranking evolution strategy baseline."""

    def __init__(self, n_landmarks=2, r_min=1.0, r_max=50.0, sigma_m=0.1, prior_var=30.0,
                 delta=0.0, fov_alpha_deg=None, landmark_height=0.0, generations=300,
                 population=None, eval_budget=None, random_state=0):
        self.n_landmarks = n_landmarks
        self.r_min = r_min
        self.r_max = r_max
        self.sigma_m = sigma_m
        self.prior_var = prior_var
        self.delta = delta
        self.fov_alpha_deg = fov_alpha_deg
        self.landmark_height = landmark_height
        self.generations = generations
        self.population = population
        self.eval_budget = eval_budget
        self.random_state = random_state

    def _place(self, scenario):
        cfg = EvoConfig(population=self.population, generations=self.generations,
                        eval_budget=self.eval_budget, rng_seed=self.random_state)
        return evolve_place(scenario, cfg)
