"""Exception hierarchy shared by every module."""


class LandmarkOptError(Exception):
    """Base class for all package errors."""


class DegenerateGeometryError(LandmarkOptError, ValueError):
    """A setpoint and a landmark coincide while the bearing is unsmoothed."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InfeasibleScenarioError(LandmarkOptError):
    """No point satisfying the placement constraints could be found."""


class ConvergenceError(LandmarkOptError):
    """The solver failed to reach a KKT point from every start."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ScenarioFormatError(LandmarkOptError, ValueError):
    """A scenario, mission or bench document failed validation."""
