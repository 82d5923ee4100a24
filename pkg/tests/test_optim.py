import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occalib.edge2d import DirectedEdgeSet2D
from occalib.edge3d import DirectedEdgeSet3D
from occalib.geom import PinholeCamera, RigidTransform, Twist, exp_map, log_map, so3_exp
from occalib.match import CandidateLine, MatchSet, build_direction_index
from occalib.optim import (
    BehindCamera,
    CalibParams,
    InsufficientFeatures,
    accumulate_frames,
    calibrate,
    grid_search_init,
    huber_cost,
    huber_weight,
    lm_solve,
    lm_solve_detailed,
    point_to_line_residual,
    residual_jacobian,
    residuals_and_jacobian,
)
from occalib.scene import sample_perturbation

CAM = PinholeCamera(700.0, 700.0, 621.0, 187.0, 1242, 375)


def line(c, n):
    n = np.asarray(n, dtype=float)
    return CandidateLine(np.asarray(c, dtype=float), n / np.linalg.norm(n), 10.0, 0.0)


def test_residual_examples():
    assert point_to_line_residual([3, 4], line([0, 0], [1, 0])) == 3.0
    assert point_to_line_residual([9, 5], line([5, 5], [0, 1])) == 0.0


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 2 * np.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_residual_matches_two_point_distance(cx, cy, theta, px, py):
    n = np.array([np.cos(theta), np.sin(theta)])
    a = np.array([cx, cy])
    b = a + np.array([-n[1], n[0]])
    num = abs((b[0] - a[0]) * (a[1] - py) - (a[0] - px) * (b[1] - a[1]))
    assert abs(point_to_line_residual([px, py], line(a, n))) == pytest.approx(num, abs=1e-9)


def test_huber_examples():
    assert huber_cost(0.5, 1.0) == 0.25
    assert huber_cost(3.0, 1.0) == 5.0
    assert huber_cost(1.0, 1.0) == huber_cost(-1.0, 1.0) == 1.0
    eps = 1e-7
    slope_in = (huber_cost(1.0, 1.0) - huber_cost(1.0 - eps, 1.0)) / eps
    slope_out = (huber_cost(1.0 + eps, 1.0) - huber_cost(1.0, 1.0)) / eps
    assert slope_in == pytest.approx(slope_out, rel=1e-5)
    assert huber_weight(0.3, 1.0) == 1.0 and huber_weight(4.0, 1.0) == 0.25


def random_config(rng):
    xi = Twist.from_vector(np.concatenate([rng.normal(0, 0.3, 3), rng.normal(0, 0.5, 3)]))
    T = exp_map(xi)
    pc = np.array([rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(2, 40)])
    P = T.inverse().apply(pc[None])[0]
    theta = rng.uniform(0, 2 * np.pi)
    return xi, P, line(rng.uniform(0, 1000, 2), [np.cos(theta), np.sin(theta)])


def single(P, ln):
    return MatchSet(np.asarray(P, float).reshape(1, 3), np.zeros(1, np.int64), ln.c[None], ln.n[None],
                    np.ones(1), np.zeros(1), np.zeros(1, np.int64), np.zeros(1, np.int64))


def test_jacobian_against_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        xi, P, ln = random_config(rng)
        J = residual_jacobian(xi, P, ln, CAM)
        T = exp_map(xi)
        fd = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            tp = exp_map(Twist.from_vector(e)).compose(T)
            tm = exp_map(Twist.from_vector(-e)).compose(T)
            rp = residuals_and_jacobian(tp, single(P, ln), CAM, False)[0][0]
            rm = residuals_and_jacobian(tm, single(P, ln), CAM, False)[0][0]
            fd[i] = (rp - rm) / (2 * h)
        worst = max(worst, np.linalg.norm(J - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst <= 1e-4


def test_jacobian_analytic_examples():
    J = residual_jacobian(Twist.zero(), [0, 0, 10.0], line([621, 187], [1, 0]), CAM)
    assert J[3] == pytest.approx(700.0 / 10.0)
    J = residual_jacobian(Twist.zero(), [0, 0, 10.0], line([621, 187], [0, 1]), CAM)
    assert J[3] == 0.0
    with pytest.raises(BehindCamera):
        residual_jacobian(Twist.zero(), [0, 0, -1.0], line([0, 0], [1, 0]), CAM)


def synthetic_matches(xi_true, n=200, seed=0, outlier_frac=0.0):
    rng = np.random.default_rng(seed)
    T = exp_map(xi_true)
    pc = np.column_stack([rng.uniform(-8, 8, n), rng.uniform(-3, 3, n), rng.uniform(4, 30, n)])
    P = T.inverse().apply(pc)
    uv = np.column_stack([CAM.fx * pc[:, 0] / pc[:, 2] + CAM.cx, CAM.fy * pc[:, 1] / pc[:, 2] + CAM.cy])
    theta = rng.uniform(0, np.pi, n)
    normals = np.column_stack([np.cos(theta), np.sin(theta)])
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    centers = uv + rng.uniform(-3, 3, (n, 1)) * tangents
    bad = rng.random(n) < outlier_frac
    sign = rng.choice([-1.0, 1.0], n)
    centers[bad] += 100.0 * sign[bad, None] * normals[bad]
    z = np.zeros(n, np.int64)
    return MatchSet(P, z, centers, normals, np.ones(n), np.zeros(n), z, z)


XI_TRUE = Twist.from_vector([0.02, -0.01, 0.03, 0.1, -0.05, 0.2])


def start_from(xi_true, seed=3):
    return log_map(exp_map(xi_true).compose(sample_perturbation(2.0, 0.15, seed)))


def twist_error(a, b):
    d = log_map(exp_map(a).compose(exp_map(b).inverse())).as_vector()
    return np.abs(d[:3]).max(), np.abs(d[3:]).max()


def test_lm_recovers_truth_from_perturbed_start():
    xi = lm_solve(synthetic_matches(XI_TRUE), CAM, start_from(XI_TRUE))
    assert max(twist_error(xi, XI_TRUE)) <= 1e-6


def test_lm_robust_to_outliers():
    # Huber keeps a constant pull per outlier, so the sign imbalance of the
    # outliers leaves a small translation bias shrinking like 1/sqrt(n)
    rot, trans = [], []
    for seed in range(10):
        m = synthetic_matches(XI_TRUE, n=2000, seed=seed, outlier_frac=0.2)
        xi = lm_solve(m, CAM, start_from(XI_TRUE), CalibParams(huber_delta=1.0))
        r, t = twist_error(xi, XI_TRUE)
        rot.append(r)
        trans.append(t)
    assert max(rot) <= 1e-3
    assert np.median(trans) <= 1e-3 and max(trans) <= 3e-3


def test_lm_keeps_optimal_start():
    xi = lm_solve(synthetic_matches(XI_TRUE), CAM, XI_TRUE)
    assert np.array_equal(xi.as_vector(), XI_TRUE.as_vector())


def test_lm_accepted_costs_never_increase():
    m = synthetic_matches(XI_TRUE, n=300, seed=2, outlier_frac=0.2)
    _, report = lm_solve_detailed(m, CAM, start_from(XI_TRUE, 7))
    assert report.accepted >= 1
    assert np.all(np.diff(report.costs) <= 0)


def test_lm_needs_enough_pairs():
    with pytest.raises(InsufficientFeatures):
        lm_solve(synthetic_matches(XI_TRUE, n=29), CAM, XI_TRUE)


def test_params_validation():
    for kw in ({"n_opt": 0}, {"d_c_decay": 0.0}, {"d_c_decay": 1.5}, {"d_c_floor": 0.0}, {"huber_delta": 0.0}):
        with pytest.raises(ValueError):
            CalibParams(**kw)


def test_calibrate_fixed_point_on_exact_frame(exact_frame, cam, gt):
    xi_gt = log_map(gt)
    res = calibrate(exact_frame.edges2d, exact_frame.features3d, cam, xi_gt)
    assert res.converged
    assert max(twist_error(res.twist, xi_gt)) <= 1e-6


def test_calibrate_trace_schedule(noisy_frame, cam, gt):
    xi0 = log_map(gt.compose(sample_perturbation(2.0, 0.15, 11)))
    params = CalibParams()
    res = calibrate(noisy_frame.edges2d, noisy_frame.features3d, cam, xi0, params)
    assert res.converged and len(res.trace) == params.n_opt
    d_c = [t.d_c for t in res.trace]
    assert all(a >= b for a, b in zip(d_c, d_c[1:])) and min(d_c) >= params.d_c_floor
    assert res.trace[0].mean_abs_residual > res.trace[-1].mean_abs_residual
    assert [t.iteration for t in res.trace] == list(range(1, params.n_opt + 1))


def test_calibrate_single_distant_box_is_insufficient(cam, gt):
    from tests.conftest import cached_frame

    f = cached_frame(1, "hdl64", 0.0, 0.0, 0.0, "single-box")
    res = calibrate(f.edges2d, f.features3d, cam, log_map(gt))
    assert res.status == "insufficient_features"
    assert len(res.trace) >= 1 and res.trace[-1].pairs < CalibParams().min_pairs
    assert np.array_equal(res.twist.as_vector(), log_map(gt).as_vector())


def test_duplicate_frame_has_same_optimum(noisy_frame, cam, gt):
    xi0 = log_map(gt.compose(sample_perturbation(2.0, 0.15, 4)))
    pair = (noisy_frame.edges2d, noisy_frame.features3d)
    one = calibrate(accumulate_frames([pair]), None, cam, xi0)
    two = calibrate(accumulate_frames([pair, pair]), None, cam, xi0)
    assert np.allclose(one.twist.as_vector(), two.twist.as_vector(), atol=1e-9)
    assert [t.pairs * 2 for t in one.trace] == [t.pairs for t in two.trace]


def test_empty_frame_is_skipped_with_warning(noisy_frame):
    with pytest.warns(RuntimeWarning):
        ctx = accumulate_frames([(noisy_frame.edges2d, noisy_frame.features3d), (DirectedEdgeSet2D(), DirectedEdgeSet3D())])
    assert len(ctx) == 1


def test_frames_only_match_their_own_edges(noisy_frame, cam, gt):
    ctx = accumulate_frames([(noisy_frame.edges2d, noisy_frame.features3d), (noisy_frame.edges2d, DirectedEdgeSet3D({0: [[5.0, 0, 0]]}))])
    m = ctx.associate(gt, cam, CalibParams().match_params(50.0))
    assert set(np.unique(m.frames).tolist()) <= {0, 1}
    assert np.sum(m.frames == 1) <= 1


def test_grid_search_keeps_optimal_start(exact_frame, cam, gt):
    xi_gt = log_map(gt)
    ctx = accumulate_frames([(exact_frame.edges2d, exact_frame.features3d)])
    xi = grid_search_init(ctx, cam, xi_gt, rot_span=1.0, trans_span=0.01)
    assert xi is xi_gt


def test_grid_search_rejects_small_spans(exact_frame, cam, gt):
    with pytest.raises(ValueError):
        grid_search_init((exact_frame.edges2d, exact_frame.features3d), cam, log_map(gt), rot_span=0.5)


def test_grid_search_improves_rotated_start(noisy_frame, cam, gt):
    offset = RigidTransform(so3_exp([0.0, np.radians(3.0), 0.0]), np.zeros(3))
    xi0 = log_map(offset.compose(gt))
    xi = grid_search_init((noisy_frame.edges2d, noisy_frame.features3d), cam, xi0, rot_span=4.0, trans_span=0.01)
    err0 = twist_error(xi0, log_map(gt))[0]
    assert twist_error(xi, log_map(gt))[0] < err0 - np.radians(1.5)


def test_calibration_is_deterministic(noisy_frame, cam, gt):
    xi0 = log_map(gt.compose(sample_perturbation(2.0, 0.15, 9)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = calibrate(noisy_frame.edges2d, noisy_frame.features3d, cam, xi0)
        b = calibrate(build_direction_index(noisy_frame.edges2d), noisy_frame.features3d, cam, xi0)
    assert np.array_equal(a.final_transform.matrix(), b.final_transform.matrix())
