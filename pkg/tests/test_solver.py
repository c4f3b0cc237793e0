import itertools

import numpy as np
import pytest

from landmark_opt import (ConvergenceError, MeasurementModel, Scenario, SolverConfig, build_nlp,
                          evaluate_placement, solve)
from landmark_opt.solver import (START_SLACK, find_descent_direction, initialize_starts,
                                 kkt_certificate, landmark_distance)

from .conftest import SCENARIOS


def single_cost(model, Z):
    return evaluate_placement(Scenario(np.zeros((1, 3)), len(Z), 1e-3, 1e3, model), Z).max_cost


def test_single_landmark_closed_form(model):
    sc = Scenario(np.zeros((1, 3)), 1, 2.0, 30.0, model)
    rep = solve(build_nlp(sc), SolverConfig(starts=3))
    expected = 30 + 2 / (1 / 30 + 1 / (0.01 * 4))
    assert rep.objective == pytest.approx(expected, rel=1e-6)
    assert np.linalg.norm(rep.best.landmarks[0]) == pytest.approx(2.0, rel=1e-5)


def test_two_landmarks_match_grid_search(model):
    sc = Scenario(np.zeros((1, 3)), 2, 2.0, 10.0, model)
    rep = solve(build_nlp(sc), SolverConfig(starts=5))
    # first landmark on e1 by symmetry; second in the e1-e2 plane
    best = np.inf
    for r1, r2, th in itertools.product(np.linspace(2, 6, 21), np.linspace(2, 6, 21),
                                        np.linspace(0.05, np.pi, 60)):
        Z = np.array([[r1, 0, 0], [r2 * np.cos(th), r2 * np.sin(th), 0]])
        best = min(best, single_cost(model, Z))
    assert rep.objective <= best * (1 + 1e-6)
    assert rep.objective == pytest.approx(best, rel=0.01)
    b = rep.best.landmarks / np.linalg.norm(rep.best.landmarks, axis=1, keepdims=True)
    assert abs(b[0] @ b[1]) < 0.05


def test_rotation_by_symmetry_angle(model):
    X = np.array([[6, 0, 0], [0, 6, 0], [-6, 0, 0], [0, -6, 0]], float)
    R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
    a = solve(build_nlp(Scenario(X, 2, 2.0, 30.0, model)), SolverConfig(starts=6)).objective
    b = solve(build_nlp(Scenario(X @ R.T, 2, 2.0, 30.0, model)), SolverConfig(starts=6)).objective
    assert a == pytest.approx(b, rel=1e-4)


def test_starts_are_strictly_feasible_and_seeded(square_scenario):
    nlp = build_nlp(square_scenario)
    a = initialize_starts(square_scenario, 6, np.random.default_rng(3))
    b = initialize_starts(square_scenario, 6, np.random.default_rng(3))
    assert len(a) == 6
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
        assert nlp.constraints(u).min() >= START_SLACK


def test_single_start_is_the_clustering_start(square_scenario):
    one = initialize_starts(square_scenario, 1, np.random.default_rng(9))
    many = initialize_starts(square_scenario, 4, np.random.default_rng(9))
    assert len(one) == 1
    assert np.array_equal(one[0], many[0])


def test_report_fields_and_kkt(square_scenario):
    cfg = SolverConfig(starts=4)
    nlp = build_nlp(square_scenario)
    rep = solve(nlp, cfg)
    assert rep.kkt_residual <= cfg.kkt_tol
    assert rep.starts_converged == 4
    assert len(rep.trace) == 4
    assert rep.best.feasible
    assert rep.objective >= rep.best.max_cost
    assert rep.objective == pytest.approx(rep.best.max_cost, rel=1e-6)
    res, comp, lam = kkt_certificate(nlp, rep.x, cfg.barrier_floor)
    assert res <= cfg.kkt_tol and np.all(lam >= 0)
    objs = [o for _, o in rep.distinct_local_minima]
    assert objs == sorted(objs)


def test_workers_do_not_change_result(square_scenario):
    a = solve(build_nlp(square_scenario), SolverConfig(starts=4, workers=1))
    b = solve(build_nlp(square_scenario), SolverConfig(starts=4, workers=2))
    assert np.array_equal(a.x, b.x)


def test_explicit_starts(square_scenario):
    starts = initialize_starts(square_scenario, 2, np.random.default_rng(0))
    rep = solve(build_nlp(square_scenario), SolverConfig(), starts=starts)
    assert len(rep.trace) == 2


def test_unreachable_tolerance_raises(square_scenario):
    with pytest.raises(ConvergenceError) as info:
        solve(build_nlp(square_scenario), SolverConfig(starts=2, kkt_tol=1e-30, max_newton_iters=5))
    assert len(info.value.trace) == 2


@pytest.mark.parametrize("kwargs", [dict(kkt_tol=0), dict(barrier_shrink=1.5), dict(starts=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_landmark_distance_uses_matching():
    Z = np.array([[0, 0, 0], [10, 0, 0]], float)
    assert landmark_distance(Z, Z[::-1]) == 0.0
    assert landmark_distance(Z, Z + [0, 1, 0]) == pytest.approx(1.0)


def test_descent_probe():
    from landmark_opt.io import load_scenario

    sc = load_scenario(SCENARIOS / "rectangle.json").scenario
    centroid = np.zeros((2, 3))
    found = find_descent_direction(sc, centroid)
    assert found is not None
    after = evaluate_placement(sc, centroid + found.step * found.direction.reshape(2, 3))
    assert after.feasible
    assert after.max_cost < evaluate_placement(sc, centroid).max_cost
    rep = solve(build_nlp(sc), SolverConfig(starts=4))
    assert find_descent_direction(sc, rep.best.landmarks, random_dirs=50) is None


def test_prior_overrides_change_the_optimum(model):
    X = np.array([[5.0, 0, 0], [-5.0, 0, 0]])
    P = np.stack([np.eye(3) / 30, np.eye(3) * 10])
    rep = solve(build_nlp(Scenario(X, 1, 1.0, 20.0, model, prior_overrides=P)), SolverConfig(starts=4))
    # the well-known second setpoint pulls nothing, so the landmark sits by the first
    z = rep.best.landmarks[0]
    assert np.linalg.norm(z - X[0]) < np.linalg.norm(z - X[1])
