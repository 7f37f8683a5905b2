import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from burstalign.liegroup import (BranchError, RigidMotion, Twist, compose, exp_se3, exp_so3, hat, inverse,
                                 left_jacobian_se3, left_jacobian_so3, linear_pose, log_se3, log_so3, vee)

finite3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


def small_twist(max_angle=1.0):
    omega = arrays(np.float64, 3, elements=st.floats(-1, 1)).map(
        lambda w: w * min(1.0, max_angle / max(np.linalg.norm(w), 1e-12)))
    v = arrays(np.float64, 3, elements=st.floats(-2, 2))
    return st.tuples(omega, v).map(lambda p: np.concatenate(p))


def twist_matrix(xi):
    T = np.zeros((4, 4))
    T[:3, :3] = hat(xi[:3])
    T[:3, 3] = xi[3:]
    return T


# -- hat -----------------------------------------------------------------------

def test_hat_zero():
    assert np.array_equal(hat([0, 0, 0]), np.zeros((3, 3)))


def test_hat_z_axis():
    assert np.array_equal(hat([0, 0, 1]), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])


@given(finite3, finite3)
def test_hat_is_cross_product(w, x):
    expected = np.array([w[1] * x[2] - w[2] * x[1], w[2] * x[0] - w[0] * x[2], w[0] * x[1] - w[1] * x[0]])
    np.testing.assert_allclose(hat(w) @ x, expected, atol=1e-9)
    np.testing.assert_array_equal(hat(w), -hat(w).T)
    np.testing.assert_array_equal(vee(hat(w)), w)


# -- exp -----------------------------------------------------------------------

def test_exp_zero_is_identity():
    m = exp_se3(np.zeros(6))
    assert np.array_equal(m.R, np.eye(3)) and np.array_equal(m.t, np.zeros(3))


def test_exp_quarter_turn_about_z():
    m = exp_se3([0, 0, np.pi / 2, 0, 0, 0])
    np.testing.assert_allclose(m.R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(m.t, 0, atol=1e-15)


def test_exp_pure_translation():
    m = exp_se3([0, 0, 0, 1, 2, 3])
    np.testing.assert_array_equal(m.R, np.eye(3))
    np.testing.assert_array_equal(m.t, [1, 2, 3])


def test_exp_matches_frozen_matrix_exponential():
    # values from scipy.linalg.expm of the 4x4 twist matrix
    m = exp_se3([0.3, -0.2, 0.5, 1.0, 2.0, -0.5])
    R = [[0.8595338985586631, -0.49799153700292204, -0.11491695393636678],
         [0.4398676329582309, 0.8353156052067086, -0.3297943376922551],
         [0.2602267140480944, 0.23292116428443654, 0.937032437284918]]
    t = [0.4847593971152357, 2.2020031485048714, -0.11005437886719265]
    np.testing.assert_allclose(m.R, R, atol=1e-14)
    np.testing.assert_allclose(m.t, t, atol=1e-14)


@given(small_twist(3.0))
def test_exp_matches_expm_and_is_a_rotation(xi):
    m = exp_se3(xi)
    E = expm(twist_matrix(xi))
    np.testing.assert_allclose(m.R, E[:3, :3], atol=1e-10)
    np.testing.assert_allclose(m.t, E[:3, 3], atol=1e-10)
    assert m.is_valid(1e-9)


@pytest.mark.parametrize("theta", [0.0, 1e-9, 1e-6, 1e-3, 0.2499, 0.2501, 0.5])
def test_exp_continuous_across_series_switch(theta):
    axis = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    xi = np.r_[theta * axis, 0.3, -0.1, 0.2]
    E = expm(twist_matrix(xi))
    m = exp_se3(xi)
    np.testing.assert_allclose(m.R, E[:3, :3], atol=1e-14)
    np.testing.assert_allclose(m.t, E[:3, 3], atol=1e-14)


def test_twist_accepted_by_exp():
    xi = Twist([0.1, 0.2, 0.3], [1, 2, 3])
    np.testing.assert_array_equal(exp_se3(xi).t, exp_se3(xi.as_vector()).t)
    assert np.array_equal(Twist.from_vector(xi.as_vector()).v, xi.v)


def test_linear_pose_first_order():
    xi = np.r_[1e-4, -2e-4, 3e-4, 0.1, 0.2, 0.3]
    a, b = linear_pose(xi), exp_se3(xi)
    np.testing.assert_allclose(a.R, b.R, atol=1e-7)
    np.testing.assert_allclose(a.t, b.t, atol=1e-4)


# -- log -----------------------------------------------------------------------

def test_log_identity():
    np.testing.assert_array_equal(log_so3(np.eye(3)), np.zeros(3))


def test_log_x_rotation():
    c, s = np.cos(0.3), np.sin(0.3)
    R = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    np.testing.assert_allclose(log_so3(R), [0.3, 0, 0], atol=1e-15)


def test_log_rejects_half_turn():
    with pytest.raises(BranchError):
        log_so3(np.diag([1.0, -1.0, -1.0]))


@given(small_twist(3.0))
def test_exp_log_round_trip(xi):
    m = exp_se3(xi)
    np.testing.assert_allclose(exp_so3(log_so3(m.R)), m.R, atol=1e-8)
    back = log_se3(m)
    np.testing.assert_allclose(back.as_vector(), xi, atol=1e-8)


# -- inverse / compose -------------------------------------------------------

def test_inverse_identity_and_translation():
    I = RigidMotion.identity()
    assert np.array_equal(inverse(I).R, np.eye(3))
    m = inverse(RigidMotion(np.eye(3), [1, 2, 3]))
    np.testing.assert_array_equal(m.t, [-1, -2, -3])


@given(small_twist(3.0))
def test_compose_with_inverse(xi):
    m = exp_se3(xi)
    for c in (compose(m, inverse(m)), inverse(m) @ m):
        np.testing.assert_allclose(c.R, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(c.t, 0, atol=1e-10)


# -- left Jacobian -------------------------------------------------------------

def test_left_jacobian_at_zero():
    np.testing.assert_array_equal(left_jacobian_se3(np.zeros(6)), np.eye(6))


def test_left_jacobian_rotation_block():
    w = np.array([0.2, -0.4, 0.1])
    J = left_jacobian_se3(np.r_[w, 0, 0, 0])
    np.testing.assert_allclose(J[:3, :3], left_jacobian_so3(w), atol=1e-15)
    np.testing.assert_allclose(J[3:, 3:], left_jacobian_so3(w), atol=1e-15)
    np.testing.assert_allclose(J[3:, :3], 0, atol=1e-15)


def _fd_left_jacobian(xi, h=1e-6):
    """Columns d/dxi_j of Log(Exp(xi + h e_j) Exp(xi)^-1) by central differences."""
    base_inv = inverse(exp_se3(xi))
    out = np.zeros((6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        plus = log_se3(compose(exp_se3(xi + e), base_inv)).as_vector()
        minus = log_se3(compose(exp_se3(xi - e), base_inv)).as_vector()
        out[:, j] = (plus - minus) / (2 * h)
    return out


@given(small_twist(1.0))
def test_left_jacobian_matches_finite_differences(xi):
    J = left_jacobian_se3(xi)
    Jn = _fd_left_jacobian(xi)
    assert np.abs(J - Jn).max() <= 1e-5 * max(1.0, np.abs(Jn).max())


def test_left_jacobian_many_random_twists():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        w = rng.standard_normal(3)
        w *= rng.uniform(0, 1) / np.linalg.norm(w)
        xi = np.r_[w, rng.uniform(-2, 2, 3)]
        J, Jn = left_jacobian_se3(xi), _fd_left_jacobian(xi)
        worst = max(worst, np.abs(J - Jn).max() / np.abs(Jn).max())
    assert worst <= 1e-5
