import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from landmark_opt import (EvoConfig, FovSpec, GreedyConfig, InfeasibleScenarioError,
                          MeasurementModel, Scenario, SolverConfig, build_nlp, evaluate_placement,
                          evolve_place, greedy_place, solve)
from landmark_opt.baselines import candidate_grid, population_fitness, stochastic_rank
from landmark_opt.bench import sample_instance
from landmark_opt.core import batch_costs


def test_candidate_grid_is_feasible(square_scenario):
    G = candidate_grid(square_scenario, GreedyConfig(3.0))
    assert len(G) > 100
    assert np.all(np.linalg.norm(G, axis=1) <= square_scenario.r_max + 1e-9)
    d = np.linalg.norm(G[:, None] - square_scenario.setpoints[None], axis=-1)
    assert d.min() >= square_scenario.r_min


def test_planar_grid_sits_at_landmark_height(model):
    sc = Scenario(np.zeros((1, 3)), 1, 1.0, 10.0, model, fov=FovSpec(2.0, landmark_height=2.0))
    G = candidate_grid(sc, GreedyConfig(1.0))
    assert np.all(G[:, 2] == 2.0)


def test_single_landmark_within_one_cell_of_optimum(model):
    x = np.array([0.3, 0.1, 0.2])
    sc = Scenario(x[None], 1, 2.0, 10.0, model)
    h = 0.5
    p = greedy_place(sc, GreedyConfig(h, boundary_shell=False))
    # continuous optimum: any point at exactly r_min
    assert abs(np.linalg.norm(p.landmarks[0] - x) - 2.0) <= h * np.sqrt(3)
    fine = Scenario(x[None], 1, 2.0, 10.0, model)
    cont = 30 + 2 / (1 / 30 + 1 / (0.01 * 4))
    assert p.max_cost >= cont * (1 - 1e-12)
    assert evaluate_placement(fine, p.landmarks).feasible


def test_greedy_first_pick_is_lowest_index_minimizer(model):
    X = np.array([[3.0, 0, 0], [-3.0, 0, 0], [0, 4.0, 0]])
    sc = Scenario(X, 1, 1.0, 12.0, model)
    cfg = GreedyConfig(2.0)
    G = candidate_grid(sc, cfg)
    scores = np.array([batch_costs(X, g[None], model).max() for g in G])
    ties = np.flatnonzero(scores <= scores.min() * (1 + 1e-12))
    p = greedy_place(sc, cfg)
    idx = int(np.flatnonzero((G == p.landmarks[0]).all(axis=1))[0])
    assert idx in ties
    assert idx == ties[0] or np.isclose(scores[idx], scores[ties[0]], rtol=1e-14)


def test_greedy_does_not_reuse_points(square_scenario):
    p = greedy_place(square_scenario, GreedyConfig(5.0))
    assert len(np.unique(p.landmarks, axis=0)) == square_scenario.M
    assert p.evaluations > 0


def test_greedy_empty_grid_raises(model):
    X = np.array([[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0], [0, 0, 2], [0, 0, -2]], float)
    with pytest.raises(InfeasibleScenarioError):
        greedy_place(Scenario(X, 1, 2.9, 3.0, model), GreedyConfig(1.0, boundary_shell=False))


def test_greedy_respects_fov(model):
    X = np.array([[5.0, 0, 0], [-5.0, 0, 0]])
    sc = Scenario(X, 2, 1.0, 20.0, model, fov=FovSpec(np.deg2rad(90)))
    p = greedy_place(sc, GreedyConfig(2.0))
    assert p.feasible and p.headings.shape == (2, 2)


@given(st.lists(st.floats(0, 10), min_size=2, max_size=30), st.data())
def test_ranking_with_pf_zero_orders_by_penalty(f, data):
    # infeasible pairs compare by penalty only; feasible pairs by objective
    phi = data.draw(st.lists(st.sampled_from([0.0, 0.5, 2.0]), min_size=len(f), max_size=len(f)))
    f, phi = np.array(f), np.array(phi)
    order = stochastic_rank(f, phi, 0.0, np.random.default_rng(0))
    assert sorted(order) == list(range(len(f)))
    assert np.all(np.diff(phi[order]) >= 0)
    feasible = f[order][phi[order] == 0]
    assert np.all(np.diff(feasible) >= 0)
    for level in (0.5, 2.0):
        # equal penalties keep their input order
        idx = order[phi[order] == level]
        assert np.all(np.diff(idx) > 0)


def test_ranking_all_feasible_is_stable_sort():
    f = np.array([3.0, 1.0, 1.0, 2.0])
    assert list(stochastic_rank(f, np.zeros(4), 0.45, np.random.default_rng(1))) == [1, 2, 3, 0]


def test_population_fitness_penalty(square_scenario):
    good = np.array([[0, 0, 10, 0, 0, -10]], float)
    bad = np.array([[5, 5, 0, 0, 0, 40]], float)
    _, phi = population_fitness(square_scenario, np.vstack([good, bad]))
    assert phi[0] == 0
    assert phi[1] == pytest.approx(2.0**2 + 10.0**2)


def test_evolution_seed_determinism(square_scenario):
    cfg = EvoConfig(generations=40, rng_seed=5)
    a = evolve_place(square_scenario, cfg)
    b = evolve_place(square_scenario, cfg)
    assert np.array_equal(a.landmarks, b.landmarks)
    assert a.feasible


@pytest.mark.parametrize("budget", [1200, 2400, 4800])
def test_doubling_budget_never_worsens(square_scenario, budget):
    small = evolve_place(square_scenario, EvoConfig(eval_budget=budget, rng_seed=2))
    large = evolve_place(square_scenario, EvoConfig(eval_budget=2 * budget, rng_seed=2))
    assert large.max_cost <= small.max_cost
    assert np.all(np.diff(large.history) <= 0)


def test_budget_below_population_rejected(square_scenario):
    with pytest.raises(ValueError):
        evolve_place(square_scenario, EvoConfig(population=50, eval_budget=10))


def test_evolution_in_planar_mode(model):
    X = np.array([[5.0, 0, 0], [-5.0, 0, 0], [0, 5.0, 0]])
    sc = Scenario(X, 2, 1.0, 20.0, model, fov=FovSpec(np.deg2rad(120), landmark_height=1.0))
    p = evolve_place(sc, EvoConfig(generations=60))
    assert p.feasible
    assert np.all(p.landmarks[:, 2] == 1.0)


def test_ordering_on_random_instances():
    # greedy never beats the local solver; the evolution strategy beats greedy almost always
    evo_wins = 0
    for i in range(10):
        sc, _ = sample_instance(5, 2, 0.1, seed=100 + i)
        g = greedy_place(sc).max_cost
        e = evolve_place(sc, EvoConfig(rng_seed=i)).max_cost
        evo_wins += e <= g
        if i < 4:
            ours = solve(build_nlp(sc), SolverConfig(rng_seed=i)).objective
            assert g >= ours * (1 - 1e-9)
    assert evo_wins >= 9
