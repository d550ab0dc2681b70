import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnssinit.errors import AntipodalPoints, NotSkewSymmetric
from gnssinit.manifold import (
    Pose,
    exp_se3,
    exp_so3,
    exp_so3_batch,
    hat,
    is_rotation,
    left_jacobian_so3,
    log_se3,
    log_so3,
    log_so3_batch,
    project_to_so3,
    right_jacobian_inv_so3,
    right_jacobian_inv_so3_batch,
    right_jacobian_so3,
    right_jacobian_so3_batch,
    s2_boxminus,
    s2_boxplus,
    s2_tangent_basis,
    vee,
)
from gnssinit.numdiff import jacobian

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def random_rotvec(rng, max_angle=np.pi - 1e-3):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rng.uniform(0.0, max_angle) * axis


def test_hat_vee_roundtrip():
    v = np.array([0.3, -1.2, 2.0])
    assert np.allclose(vee(hat(v)), v)
    assert np.allclose(hat(v) @ np.array([1.0, 2.0, 3.0]), np.cross(v, [1.0, 2.0, 3.0]))


def test_vee_rejects_non_skew():
    with pytest.raises(NotSkewSymmetric):
        vee(np.eye(3))


def test_exp_of_zero_is_identity():
    assert np.array_equal(exp_so3(np.zeros(3)), np.eye(3))
    assert np.allclose(log_so3(np.eye(3)), 0.0)


def test_small_angle_matches_series():
    phi = np.array([1e-10, -2e-10, 3e-10])
    assert np.allclose(exp_so3(phi), np.eye(3) + hat(phi), atol=1e-18)
    assert np.allclose(log_so3(exp_so3(phi)), phi, atol=1e-20)


def test_log_near_pi():
    rng = np.random.default_rng(1)
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        for theta in (np.pi - 1e-7, np.pi - 1e-4, np.pi):
            phi = theta * axis
            R = exp_so3(phi)
            back = log_so3(R)
            assert np.linalg.norm(back) <= np.pi + 1e-12
            assert np.allclose(exp_so3(back), R, atol=1e-9)


def test_batch_helpers_match_scalar():
    rng = np.random.default_rng(2)
    phis = np.array([random_rotvec(rng) for _ in range(40)] + [np.zeros(3), np.array([0, 0, np.pi - 1e-6])])
    R = exp_so3_batch(phis)
    for k, phi in enumerate(phis):
        assert np.allclose(R[k], exp_so3(phi), atol=1e-14)
    L = log_so3_batch(R)
    for k in range(len(phis)):
        assert np.allclose(L[k], log_so3(R[k]), atol=1e-12)
    Jr, Ji = right_jacobian_so3_batch(phis), right_jacobian_inv_so3_batch(phis)
    for k, phi in enumerate(phis[:-1]):
        assert np.allclose(Jr[k], right_jacobian_so3(phi), atol=1e-13)
        assert np.allclose(Ji[k], right_jacobian_inv_so3(phi), atol=1e-12)


def test_right_jacobian_definition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        phi = random_rotvec(rng, 2.5)
        num = jacobian(lambda d: log_so3(exp_so3(phi).T @ exp_so3(phi + d)), 3, h=1e-5)
        assert np.allclose(num, right_jacobian_so3(phi), atol=1e-8)
        assert np.allclose(right_jacobian_inv_so3(phi) @ right_jacobian_so3(phi), np.eye(3), atol=1e-12)
        assert np.allclose(left_jacobian_so3(phi), right_jacobian_so3(phi).T, atol=1e-12)


def test_se3_roundtrip_and_group_ops():
    rng = np.random.default_rng(4)
    for _ in range(50):
        xi = np.concatenate([rng.normal(size=3) * 5.0, random_rotvec(rng)])
        T = exp_se3(xi)
        assert np.allclose(log_se3(T), xi, atol=1e-9)
        I = T.compose(T.inverse())
        assert np.allclose(I.matrix(), np.eye(4), atol=1e-12)
        p = rng.normal(size=3)
        assert np.allclose(T.matrix() @ np.append(p, 1.0), np.append(T.act(p), 1.0))


def test_pose_identity():
    T = Pose.identity()
    assert np.array_equal(T.act(np.ones(3)), np.ones(3))


def test_project_to_so3():
    rng = np.random.default_rng(5)
    R = exp_so3(random_rotvec(rng))
    noisy = R + 1e-3 * rng.normal(size=(3, 3))
    Q = project_to_so3(noisy)
    assert is_rotation(Q)
    assert np.linalg.norm(Q - R) < 1e-2
    assert not is_rotation(noisy)


def test_s2_basis_is_orthonormal_tangent():
    rng = np.random.default_rng(6)
    for _ in range(100):
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        B = s2_tangent_basis(g)
        assert np.allclose(B.T @ B, np.eye(2), atol=1e-12)
        assert np.allclose(B.T @ g, 0.0, atol=1e-12)
        assert np.linalg.det(np.column_stack([B, g])) > 0


def test_s2_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        d = rng.uniform(-1.0, 1.0, size=2)
        h = s2_boxplus(g, d)
        assert abs(np.linalg.norm(h) - 1.0) < 1e-12
        assert np.allclose(s2_boxminus(h, g), d, atol=1e-9)
    assert np.allclose(s2_boxminus(g, g), 0.0)


def test_s2_boxminus_antipodal():
    g = np.array([0.0, 0.0, -1.0])
    with pytest.raises(AntipodalPoints):
        s2_boxminus(-g, g)


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_property_so3_roundtrip(phi):
    if np.linalg.norm(phi) >= np.pi - 1e-6:
        phi = phi / np.linalg.norm(phi) * (np.pi - 1e-3)
    R = exp_so3(phi)
    assert is_rotation(R)
    assert np.allclose(log_so3(R), phi, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(vec3, vec3)
def test_property_rotation_composition(a, b):
    Ra, Rb = exp_so3(a), exp_so3(b)
    R = Ra @ Rb
    assert is_rotation(R, 1e-9)
    assert np.allclose(exp_so3(log_so3(R)), R, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(vec3, arrays(np.float64, 2, elements=st.floats(-1.5, 1.5)))
def test_property_s2_boxplus_inverse(gv, d):
    if np.linalg.norm(gv) < 1e-3:
        return
    g = gv / np.linalg.norm(gv)
    assert np.allclose(s2_boxminus(s2_boxplus(g, d), g), d, atol=1e-8)
