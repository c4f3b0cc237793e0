import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from landmark_opt import DegenerateGeometryError, MeasurementModel
from landmark_opt.simkit import (Mission, drift_rows, ekf_gain, ekf_update, discretize_trajectory,
                                 information_posterior, monte_carlo_covariance, run_drift_mission,
                                 sample_bearing, sample_coverage, standard_fix_scenario,
                                 standard_mission)


def _random_fix(rng, M):
    mean = rng.uniform(-5, 5, 3)
    A = rng.normal(size=(3, 3))
    P = A @ A.T + 0.5 * np.eye(3)
    Z = mean + rng.normal(size=(M, 3)) * 8
    return mean, P, Z


@pytest.mark.parametrize("M", [1, 2, 5])
@pytest.mark.parametrize("delta", [0.0, 0.3])
def test_ekf_posterior_matches_information_form(rng, M, delta):
    model = MeasurementModel.isotropic(0.07, delta=delta)
    for _ in range(20):
        mean, P, Z = _random_fix(rng, M)
        post = ekf_gain(mean, P, Z, model).posterior_cov
        ref = information_posterior(mean, P, Z, model)
        assert np.allclose(post, ref, rtol=0, atol=1e-10 * max(1.0, np.abs(ref).max()))


def test_no_landmarks_leaves_prior_unchanged(rng):
    model = MeasurementModel.isotropic(0.1)
    mean, P, _ = _random_fix(rng, 1)
    m2, P2 = ekf_update(mean, P, [], model)
    assert np.array_equal(m2, mean) and np.array_equal(P2, P)
    assert np.array_equal(ekf_gain(mean, P, np.zeros((0, 3)), model).posterior_cov, P)


def test_noise_free_update_at_truth_is_a_fixed_point():
    model = MeasurementModel.isotropic(0.1)
    x = np.array([1.0, 2.0, 3.0])
    Z = np.array([[10.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0]])
    y = [((z - x) / np.linalg.norm(z - x), z) for z in Z]
    m, _ = ekf_update(x, np.eye(3), y, model)
    assert np.allclose(m, x, atol=1e-12)


def test_sample_bearing_noise_statistics():
    model = MeasurementModel.isotropic(0.2)
    rng = np.random.default_rng(0)
    x, z = np.zeros(3), np.array([0.0, 0.0, 5.0])
    Y = np.array([sample_bearing(x, z, model, rng) for _ in range(20_000)])
    err = Y - np.array([0.0, 0.0, 1.0])
    assert np.allclose(err.mean(0), 0, atol=0.01)
    assert np.allclose(err.std(0), 0.2, rtol=0.03)


def test_sample_bearing_rejects_coincident_points(rng):
    with pytest.raises(DegenerateGeometryError):
        sample_bearing(np.ones(3), np.ones(3), MeasurementModel.isotropic(0.1), rng)


def test_monte_carlo_small_run_is_reproducible():
    args = standard_fix_scenario(0.05)
    a = monte_carlo_covariance(*args, trials=2000, seed=3)
    b = monte_carlo_covariance(*args, trials=2000, seed=3)
    c = monte_carlo_covariance(*args, trials=2000, seed=4)
    assert a == b and a != c
    assert a["relative_error"] < 0.2


# trajectories and coverage


def test_straight_segment_count():
    pts = discretize_trajectory([[0, 0, 0], [10, 0, 0]], 5.0)
    assert np.allclose(pts, [[0, 0, 0], [5, 0, 0], [10, 0, 0]])


def test_short_path_keeps_start():
    pts = discretize_trajectory([[0, 0, 0], [1, 0, 0]], 5.0)
    assert np.allclose(pts, [[0, 0, 0]])


def test_spacing_must_be_positive():
    with pytest.raises(ValueError):
        discretize_trajectory([[0, 0, 0], [1, 0, 0]], 0.0)


@given(
    arrays(float, (4, 3), elements=st.floats(-20, 20, allow_nan=False)),
    st.floats(0.5, 6.0),
)
def test_discretization_count_and_points_on_polyline(W, spacing):
    seg = np.linalg.norm(np.diff(W, axis=0), axis=1)
    L = seg.sum()
    pts = discretize_trajectory(W, spacing)
    assert len(pts) == int(np.floor(L / spacing + 1e-9)) + 1
    assert np.allclose(pts[0], W[0])
    # every sample lies on some segment
    for p in pts:
        d = np.inf
        for a, b in zip(W[:-1], W[1:]):
            ab = b - a
            t = 0.0 if ab @ ab == 0 else np.clip((p - a) @ ab / (ab @ ab), 0, 1)
            d = min(d, np.linalg.norm(a + t * ab - p))
        assert d < 1e-8


def test_coverage_unit_cube():
    pts = sample_coverage([0, 0, 0], [1, 1, 1], 0.5)
    assert pts.shape == (27, 3)
    assert set(np.unique(pts)) == {0.0, 0.5, 1.0}


def test_coverage_jitter_is_seeded_and_clipped():
    a = sample_coverage([0, 0, 0], [2, 2, 2], 1.0, jitter=0.5, seed=7)
    b = sample_coverage([0, 0, 0], [2, 2, 2], 1.0, jitter=0.5, seed=7)
    c = sample_coverage([0, 0, 0], [2, 2, 2], 1.0, jitter=0.5, seed=8)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert a.min() >= 0 and a.max() <= 2


@pytest.mark.parametrize("lo, hi", [([0, 0, 0], [1, 0, 1]), ([1, 1, 1], [0, 2, 2])])
def test_coverage_rejects_empty_box(lo, hi):
    with pytest.raises(ValueError):
        sample_coverage(lo, hi, 0.5)


# missions


@pytest.mark.parametrize(
    "kwargs",
    [
        {"waypoints": [[0, 0, 0]]},
        {"waypoints": [[0, 0, 0], [1, 0, 0]], "speed": 0.0},
        {"waypoints": [[0, 0, 0], [1, 0, 0]], "bearing_fix_interval": 0},
        {"waypoints": [[0, 0, 0], [1, 0, 0]], "odom_noise": -1.0},
    ],
)
def test_mission_validation(kwargs):
    with pytest.raises(ValueError):
        Mission(**kwargs)


def test_zero_odometry_noise_gives_zero_drift():
    m = Mission(standard_mission().waypoints, odom_noise=0.0)
    Z = np.array([[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]])
    rep = run_drift_mission(m, Z, MeasurementModel.isotropic(0.1))
    assert rep.final_drift_with == 0.0 and rep.final_drift_without == 0.0


def test_no_landmarks_means_both_arms_agree():
    rep = run_drift_mission(standard_mission(seed=4), np.zeros((0, 3)),
                            MeasurementModel.isotropic(0.1))
    assert rep.final_drift_with == rep.final_drift_without
    assert rep.drift_reduction == 0.0 and rep.fixes == 0


def test_fixes_reduce_drift_on_average():
    model = MeasurementModel.isotropic(0.05)
    Z = np.array([[0.0, 0.0, 0.0], [20.0, 0.0, 0.0], [0.0, -20.0, 10.0]])
    reds = [run_drift_mission(standard_mission(seed=s), Z, model).drift_reduction
            for s in range(10)]
    assert np.median(reds) > 0.3


def test_drift_rows_order_and_workers():
    model = MeasurementModel.isotropic(0.1)
    opt = np.array([[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]])
    kw = dict(sources=("optimized", "random", "none"), optimized=opt, n_landmarks=2, r_min=2.0)
    serial = drift_rows(standard_mission(), model, [5, 1, 3], **kw)
    parallel = drift_rows(standard_mission(), model, [5, 1, 3], workers=2, **kw)
    assert serial == parallel
    assert [(r["seed"], r["mode"]) for r in serial] == [
        (s, m) for s in (5, 1, 3) for m in ("optimized", "random", "none")]
    assert all(r["reduction"] == 0.0 for r in serial if r["mode"] == "none")


def test_drift_rows_requires_optimized_placement():
    with pytest.raises(ValueError):
        drift_rows(standard_mission(), MeasurementModel.isotropic(0.1), [0])
