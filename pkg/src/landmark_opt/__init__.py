"""Landmark placement for bearing-only localization."""

__version__ = "0.1.0"

from .baselines import EvoConfig, GreedyConfig, evolve_place, greedy_place
from .core import (MeasurementModel, batch_costs, cost_derivatives, localization_cost,
                   pair_info, setpoint_cost_derivatives, smoothed_bearing, total_info)
from .estimators import EvolutionaryPlacer, GreedyPlacer, MinimaxPlacer
from .exceptions import (ConvergenceError, DegenerateGeometryError, InfeasibleScenarioError,
                         LandmarkOptError, ScenarioFormatError)
from .nlp import FovSpec, Placement, Scenario, build_nlp, evaluate_placement
from .solver import SolverConfig, SolveReport, solve
from .theory import TheoryParams, select_zeta

__all__ = [
    "EvoConfig", "GreedyConfig", "evolve_place", "greedy_place",
    "MeasurementModel", "batch_costs", "cost_derivatives", "localization_cost", "pair_info",
    "setpoint_cost_derivatives", "smoothed_bearing", "total_info",
    "EvolutionaryPlacer", "GreedyPlacer", "MinimaxPlacer",
    "ConvergenceError", "DegenerateGeometryError", "InfeasibleScenarioError",
    "LandmarkOptError", "ScenarioFormatError",
    "FovSpec", "Placement", "Scenario", "build_nlp", "evaluate_placement",
    "SolverConfig", "SolveReport", "solve", "TheoryParams", "select_zeta",
]
