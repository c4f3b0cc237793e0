import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from landmark_opt import (FovSpec, InfeasibleScenarioError, MeasurementModel, Scenario,
                          build_nlp, evaluate_placement)
from landmark_opt.nlp import check_derivatives, fov_residual, heading_margins
from landmark_opt.solver import initialize_starts

from .conftest import SCENARIOS


def random_scenario(rng, N, M, fov=None, delta=0.1):
    X = rng.uniform(-5, 5, (N, 3))
    return Scenario(X, M, 1.0, 30.0, MeasurementModel.isotropic(0.1, delta=delta), fov=fov)


@pytest.mark.parametrize(
    "N, M, fov, n, m",
    [(4, 2, None, 7, 14), (10, 5, FovSpec(2.0), 21, 115), (1, 1, None, 4, 3)],
)
def test_dimension_and_constraint_counts(rng, N, M, fov, n, m):
    nlp = build_nlp(random_scenario(rng, N, M, fov))
    assert (nlp.n, nlp.m) == (n, m)
    assert len(nlp.constraints(initialize_starts(nlp.scenario, 1, rng)[0])) == m


def test_constraint_order(rng):
    nlp = build_nlp(random_scenario(rng, 3, 2, FovSpec(2.0)))
    kinds = list(nlp.kinds)
    assert kinds == ["epigraph"] * 3 + ["ball"] * 2 + ["separation"] * 6 + ["fov"] * 6


@pytest.mark.parametrize("fov", [None, FovSpec(np.deg2rad(150), landmark_height=1.5)])
def test_pack_roundtrip(rng, fov):
    sc = random_scenario(rng, 4, 3, fov)
    nlp = build_nlp(sc)
    Z = sc.sample_landmark_positions(rng, 3)
    v = nlp.pack(Z, 7.0)
    assert np.allclose(nlp.landmarks(v), Z)
    assert nlp.objective(v) == 7.0


@pytest.mark.parametrize("N, M", [(1, 1), (4, 2), (6, 3)])
@pytest.mark.parametrize("fov", [None, FovSpec(np.deg2rad(200))])
def test_constraint_derivatives_against_differences(rng, N, M, fov):
    sc = random_scenario(rng, N, M, fov)
    nlp = build_nlp(sc)
    for v in initialize_starts(sc, 3, rng):
        jac_err, hess_err = check_derivatives(nlp, v)
        assert jac_err <= 1e-5
        assert hess_err <= 1e-4


def test_fov_residual_examples():
    x, z = np.zeros(3), np.array([3.0, 4.0, 0.0])
    ang = np.arctan2(4, 3)
    assert fov_residual(ang, x, z, np.pi, 0.0) == pytest.approx(5.0)
    perp = ang + np.pi / 2
    assert fov_residual(perp, x, z, np.pi / 2, 0.0) == pytest.approx(-np.cos(np.pi / 4) * 5.0)


def test_fov_residual_non_increasing_in_delta():
    x, z = np.zeros(3), np.array([2.0, 1.0, 0.0])
    vals = [fov_residual(0.3, x, z, 2.0, d) for d in np.linspace(0, 3, 31)]
    assert np.all(np.diff(vals) <= 1e-15)


@given(seed=st.integers(0, 10_000), M=st.integers(1, 4), alpha=st.floats(0.3, 6.0))
def test_heading_margins_match_dense_search(seed, M, alpha):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, (2, 3))
    Z = rng.uniform(-8, 8, (M, 3))
    angles, margins = heading_margins(X, Z, alpha, 0.05)
    phi = np.linspace(0, 2 * np.pi, 20_001)
    n = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    for i, x in enumerate(X):
        d = Z[:, :2] - x[:2]
        env = (n @ d.T - np.cos(alpha / 2) * np.sqrt((d**2).sum(1) + 0.05**2)).min(axis=1)
        assert margins[i] >= env.max() - 1e-9
        assert margins[i] <= env.max() + 1e-2 * max(1, abs(env.max()))
        got = min(fov_residual(angles[i], x, z, alpha, 0.05) for z in Z)
        assert got == pytest.approx(margins[i], abs=1e-9)


def test_no_landmarks_costs_prior_trace(model):
    sc = Scenario(np.zeros((2, 3)), 0, 1.0, 10.0, model)
    assert evaluate_placement(sc, np.zeros((0, 3))).max_cost == pytest.approx(90.0)


def test_costs_permutation_invariant(square_scenario, rng):
    Z = square_scenario.sample_landmark_positions(rng, 2)
    a = evaluate_placement(square_scenario, Z).per_setpoint_cost
    b = evaluate_placement(square_scenario, Z[::-1]).per_setpoint_cost
    assert np.allclose(a, b, rtol=1e-13)


def test_coincident_landmarks_equal_weighted_single_direction(model):
    X = np.array([[4.0, 0, 0], [0, 5.0, 0]])
    sc = Scenario(X, 3, 1.0, 20.0, model)
    z = np.array([0.0, 0, 0])
    place = evaluate_placement(sc, np.tile(z, (3, 1)))
    heavy = MeasurementModel.isotropic(0.1 / np.sqrt(3), prior_var=30.0)
    single = Scenario(X, 1, 1.0, 20.0, heavy)
    assert np.allclose(place.per_setpoint_cost, evaluate_placement(single, z[None]).per_setpoint_cost)


def test_rectangle_coincident_worse_than_any_solver_minimum():
    from landmark_opt.io import load_scenario
    from landmark_opt.solver import SolverConfig, solve

    sc = load_scenario(SCENARIOS / "rectangle.json").scenario
    stacked = evaluate_placement(sc, np.zeros((2, 3))).max_cost
    rep = solve(build_nlp(sc), SolverConfig(starts=8))
    assert all(stacked > obj for _, obj in rep.distinct_local_minima)


def test_feasibility_flags(square_scenario):
    inside = evaluate_placement(square_scenario, [[0, 0, 10], [0, 0, -10]])
    assert inside.feasible
    close = evaluate_placement(square_scenario, [[5, 5, 1], [0, 0, -10]])
    assert not close.feasible
    assert close.max_violation == pytest.approx(1.0)


def test_infeasible_scenario_detected(model):
    X = np.array([[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0], [0, 0, 2], [0, 0, -2]], float)
    with pytest.raises(InfeasibleScenarioError):
        build_nlp(Scenario(X, 1, 2.9, 3.0, model))


@pytest.mark.parametrize(
    "kwargs",
    [dict(r_min=3.0, r_max=2.0), dict(n_landmarks=-1), dict(setpoints=[[np.nan, 0, 0]])],
)
def test_scenario_validation(model, kwargs):
    args = dict(setpoints=[[0, 0, 0]], n_landmarks=1, r_min=1.0, r_max=5.0, model=model)
    args.update(kwargs)
    with pytest.raises(ValueError):
        Scenario(**args)


def test_scenario_file_is_valid_json():
    for path in SCENARIOS.glob("*.json"):
        json.loads(path.read_text())
