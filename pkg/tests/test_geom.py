import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from occalib.geom import (
    PinholeCamera,
    RigidTransform,
    Twist,
    exp_map,
    left_jacobian,
    log_map,
    project,
    project_points,
    so3_exp,
    so3_log,
)

QUARTER_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
CAM = PinholeCamera(700.0, 700.0, 621.0, 187.0, 1242, 375)


def random_twists(n, seed=0, max_angle=np.pi - 1e-3):
    rng = np.random.default_rng(seed)
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(1e-6, max_angle, n)
    return [Twist(a * t, rng.uniform(-5, 5, 3)) for a, t in zip(axes, angles)]


def test_exp_zero_is_identity():
    T = exp_map(Twist.zero())
    assert np.array_equal(T.rotation, np.eye(3))
    assert np.array_equal(T.translation, np.zeros(3))


def test_exp_quarter_turn_about_z():
    T = exp_map(Twist([0, 0, np.pi / 2], [0, 0, 0]))
    assert np.allclose(T.rotation, QUARTER_Z, atol=1e-15)
    assert np.allclose(T.translation, 0.0)


def test_log_identity_is_zero():
    xi = log_map(RigidTransform.identity())
    assert np.allclose(xi.as_vector(), 0.0, atol=0.0)


def test_log_quarter_turn():
    xi = log_map(RigidTransform(QUARTER_Z, np.zeros(3)))
    assert np.allclose(xi.rot_vec, [0, 0, np.pi / 2], atol=1e-15)
    assert np.allclose(xi.trans_vec, 0.0)


def test_round_trip_1000_twists():
    worst = max(np.max(np.abs(log_map(exp_map(xi)).as_vector() - xi.as_vector())) for xi in random_twists(1000))
    assert worst <= 1e-9


def test_exp_rotation_matches_independent_rotation_vector_oracle():
    for xi in random_twists(200, seed=1):
        assert np.allclose(exp_map(xi).rotation, Rotation.from_rotvec(xi.rot_vec).as_matrix(), atol=1e-12)


def test_exp_translation_matches_matrix_exponential_oracle():
    from scipy.linalg import expm

    for xi in random_twists(100, seed=2):
        m = np.zeros((4, 4))
        w = xi.rot_vec
        m[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
        m[:3, 3] = xi.trans_vec
        assert np.allclose(exp_map(xi).matrix(), expm(m), atol=1e-10)


def test_small_angle_branch_is_continuous():
    for theta in (0.0, 1e-12, 1e-9, 5e-9, 2e-8, 1e-6, 1e-4, 2e-3):
        w = np.array([1.0, -2.0, 0.5]) / np.sqrt(5.25) * theta
        assert np.allclose(so3_exp(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-15)
        assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-15)


def test_log_at_pi_recovers_rotation():
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([1.0, 2.0, -2.0]) / 3.0):
        r = Rotation.from_rotvec(np.pi * axis).as_matrix()
        w = so3_log(r)
        assert abs(np.linalg.norm(w) - np.pi) < 1e-9
        assert np.allclose(so3_exp(w), r, atol=1e-9)
        T = RigidTransform(r, [1.0, 2.0, 3.0])
        assert np.allclose(exp_map(log_map(T)).matrix(), T.matrix(), atol=1e-9)


def test_log_of_composition_recovers_product():
    for a, b in zip(random_twists(200, seed=4, max_angle=2.0), random_twists(200, seed=5, max_angle=2.0)):
        A, B = exp_map(a), exp_map(b)
        AB = A @ B
        oracle = A.matrix() @ B.matrix()
        assert np.allclose(AB.matrix(), oracle, atol=1e-12)
        assert np.allclose(exp_map(log_map(AB)).matrix(), oracle, atol=1e-9)


def test_rigid_transform_invariants_hold_for_exp():
    for xi in random_twists(100, seed=6):
        assert exp_map(xi).is_valid(1e-9)


def test_inverse_composes_to_identity():
    for xi in random_twists(50, seed=7):
        T = exp_map(xi)
        assert np.allclose((T @ T.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_left_jacobian_matches_numerical_derivative_of_exp():
    # d/dt exp(w + t*dw) R(w)^T at t=0 equals skew(J_l(w) dw)
    rng = np.random.default_rng(8)
    for _ in range(50):
        w, dw = rng.normal(size=3), rng.normal(size=3)
        h = 1e-6
        d = (so3_exp(w + h * dw) - so3_exp(w - h * dw)) / (2 * h) @ so3_exp(w).T
        v = np.array([d[2, 1], d[0, 2], d[1, 0]])
        assert np.allclose(v, left_jacobian(w) @ dw, atol=1e-7)


def test_project_principal_axis():
    assert np.allclose(project(CAM, Twist.zero(), [0, 0, 5]), [621, 187])


def test_project_offset_point():
    assert np.allclose(project(CAM, Twist.zero(), [1, 0, 5]), [761, 187])


def test_project_behind_camera_marker():
    assert project(CAM, Twist([0, 0, 0], [0, 0, -1]), [0, 0, 0.5]) is None


def test_project_out_of_bounds_pixels_are_returned():
    uv = project(CAM, Twist.zero(), [10, 0, 1])
    assert uv is not None and uv[0] > CAM.width


def test_project_points_agrees_with_project():
    rng = np.random.default_rng(9)
    xi = random_twists(1, seed=10, max_angle=0.3)[0]
    pts = rng.uniform([-5, -5, 20], [5, 5, 30], (50, 3))
    uv, _, front = project_points(CAM, exp_map(xi), pts)
    for p, q, f in zip(pts, uv, front):
        single = project(CAM, xi, p)
        assert f == (single is not None)
        if f:
            assert np.allclose(q, single, atol=1e-12)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(ValueError):
        PinholeCamera(-1.0, 700.0, 621.0, 187.0, 1242, 375)
    with pytest.raises(ValueError):
        PinholeCamera(700.0, 700.0, 1300.0, 187.0, 1242, 375)


@given(
    st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3),
    st.lists(st.floats(-10.0, 10.0), min_size=3, max_size=3),
)
def test_round_trip_property(w, t):
    w = np.array(w)
    if not 0 < np.linalg.norm(w) < np.pi - 1e-3:
        return
    xi = Twist(w, t)
    assert np.allclose(log_map(exp_map(xi)).as_vector(), xi.as_vector(), atol=1e-9)


@given(
    st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
    st.floats(0.01, 100.0),
)
def test_projection_ray_invariance(p, s):
    p = np.array([p[0], p[1], abs(p[2]) + 0.5])
    assert np.allclose(project(CAM, Twist.zero(), s * p), project(CAM, Twist.zero(), p), atol=1e-9)
