import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from landmark_opt import MeasurementModel, Scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def model():
    return MeasurementModel.isotropic(0.1, prior_var=30.0)


@pytest.fixture
def square_scenario(model):
    X = np.array([[5, 5, 0], [-5, 5, 0], [-5, -5, 0], [5, -5, 0]], float)
    return Scenario(X, 2, 2.0, 30.0, model)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_outside_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*outside the r_max ball")
        yield


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
