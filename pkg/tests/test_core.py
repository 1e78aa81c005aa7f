import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lioselect.core import (SE3, NavState, PointCloud, quat_mul, quat_to_rot, rot_to_quat, se3_compose,
                            se3_exp, se3_log, slerp, so3_exp, so3_log, solve6, sym_eigen3, sym_eigen3_batch)
from lioselect.errors import DegenerateRotationError, LioSelectError

from oracles import cubic_eigenvalues, homogeneous, quat_wxyz_to_matrix, random_quat

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
vec3 = arrays(float, 3, elements=finite)
quat = arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1)


@st.composite
def poses(draw):
    return SE3(draw(quat), draw(vec3))


def _rot_trans_err(a: SE3, b: SE3):
    d_t, d_r = a.distance(b)
    return d_r, d_t


# -- SE3 examples ------------------------------------------------------------

def test_identity_compose_identity():
    T = se3_compose(SE3.identity(), SE3.identity())
    assert np.array_equal(T.rotation, [1, 0, 0, 0])
    assert np.array_equal(T.translation, [0, 0, 0])


def test_compose_with_inverse_is_identity(rng):
    for _ in range(200):
        T = SE3(random_quat(rng), rng.normal(scale=10, size=3))
        I = T @ T.inverse()
        assert I.angle() < 1e-9
        assert np.linalg.norm(I.translation) < 1e-9


def test_compose_matches_homogeneous_matrices(rng):
    for _ in range(500):
        qa, qb = random_quat(rng), random_quat(rng)
        ta, tb = rng.normal(size=3), rng.normal(size=3)
        got = se3_compose(SE3(qa, ta), SE3(qb, tb)).matrix()
        want = homogeneous(qa, ta) @ homogeneous(qb, tb)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_quaternion_convention_is_hamilton_world_from_body():
    # 90 deg about z maps body x onto world y
    q = np.array([math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)])
    np.testing.assert_allclose(SE3(q).apply([1.0, 0, 0]), [0, 1, 0], atol=1e-15)
    # i * j = k
    np.testing.assert_allclose(quat_mul([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])


def test_quat_to_rot_agrees_with_scipy(rng):
    for _ in range(100):
        q = random_quat(rng)
        np.testing.assert_allclose(quat_to_rot(q), quat_wxyz_to_matrix(q), atol=1e-14)


def test_rot_to_quat_round_trip(rng):
    for _ in range(200):
        q = random_quat(rng)
        q = q if q[0] >= 0 else -q
        np.testing.assert_allclose(rot_to_quat(quat_to_rot(q)), q, atol=1e-12)


def test_exp_zero_is_identity():
    T = se3_exp(np.zeros(6))
    assert T.angle() == 0.0
    assert np.array_equal(T.translation, np.zeros(3))


def test_exp_quarter_turn_about_z():
    T = se3_exp([0, 0, math.pi / 2, 0, 0, 0])
    np.testing.assert_allclose(T.R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(T.translation, 0.0, atol=0)


def test_exp_log_round_trip_1000_twists(rng):
    worst = 0.0
    for _ in range(1000):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
        xi = np.concatenate([w, rng.normal(scale=5, size=3)])
        worst = max(worst, np.max(np.abs(se3_log(se3_exp(xi)) - xi)))
    assert worst < 1e-9


def test_exp_small_angles_use_series_consistently():
    for s in (1e-3, 1e-5, 1e-7, 1e-9, 0.0):
        xi = np.array([s, -s, 2 * s, 0.3, -0.2, 0.1])
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-13)


def test_exp_matches_matrix_exponential(rng):
    from scipy.linalg import expm
    for _ in range(50):
        xi = rng.normal(size=6)
        w, v = xi[:3], xi[3:]
        m = np.zeros((4, 4))
        m[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
        m[:3, 3] = v
        np.testing.assert_allclose(se3_exp(xi).matrix(), expm(m), atol=1e-12)


def test_log_near_pi_raises():
    with pytest.raises(DegenerateRotationError):
        SE3([0.0, 0.0, 0.0, 1.0]).log()


def test_so3_round_trip(rng):
    for _ in range(100):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-10)


def test_slerp_endpoints_and_midpoint():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = SE3.exp([0, 0, 1.0, 0, 0, 0]).rotation
    np.testing.assert_allclose(slerp(q0, q1, 0.0), q0, atol=1e-15)
    np.testing.assert_allclose(slerp(q0, q1, 1.0), q1, atol=1e-15)
    np.testing.assert_allclose(slerp(q0, q1, 0.5), SE3.exp([0, 0, 0.5, 0, 0, 0]).rotation, atol=1e-12)


def test_se3_construction_normalizes_and_rejects_bad_input():
    T = SE3([2.0, 0, 0, 0], [1, 2, 3])
    assert abs(np.linalg.norm(T.rotation) - 1) < 1e-15
    with pytest.raises(LioSelectError):
        SE3([0, 0, 0, 0])
    with pytest.raises(LioSelectError):
        SE3([1, 0, 0, 0], [np.nan, 0, 0])


def test_unit_quaternion_bits_kept():
    q = random_quat(np.random.default_rng(3))
    q = q if q[0] >= 0 else -q
    assert np.array_equal(SE3(q).rotation, q)


# -- properties ----------------------------------------------------------------

@given(poses(), poses(), poses())
def test_composition_associative(a, b, c):
    np.testing.assert_allclose(((a @ b) @ c).matrix(), (a @ (b @ c)).matrix(), atol=1e-12)


@given(poses(), poses())
def test_composition_stays_unit(a, b):
    for _ in range(20):
        a = a @ b
    assert abs(np.linalg.norm(a.rotation) - 1.0) < 1e-9


@given(poses())
def test_inverse_round_trip(T):
    d_r, d_t = _rot_trans_err(T @ T.inverse(), SE3())
    assert d_r < 1e-9 and d_t < 1e-9


@given(poses(), arrays(float, (5, 3), elements=finite))
def test_apply_matches_matrix(T, pts):
    h = np.hstack([pts, np.ones((5, 1))]) @ T.matrix().T
    np.testing.assert_allclose(T.apply(pts), h[:, :3], atol=1e-12)


def test_core_types_are_values():
    T = SE3(random_quat(np.random.default_rng(0)), [1, 2, 3])
    T2 = copy.deepcopy(T)
    with pytest.raises(ValueError):
        T.translation[0] = 5.0
    t2 = np.array(T2.translation)
    t2[0] = 99
    assert T.translation[0] == 1.0

    c = PointCloud(np.ones((4, 3)), stamp=1.0, scan_duration=0.1)
    c2 = copy.deepcopy(c)
    arr = c2.xyz.copy()
    arr[:] = 7
    assert np.all(c.xyz == 1.0)
    with pytest.raises(ValueError):
        c.xyz[0, 0] = 3.0

    s = NavState(T, [1, 0, 0])
    s2 = copy.deepcopy(s)
    v = s2.velocity.copy()
    v[0] = -1
    assert s.velocity[0] == 1.0


def test_pointcloud_invariants():
    with pytest.raises(LioSelectError):
        PointCloud([[np.inf, 0, 0]])
    with pytest.raises(LioSelectError):
        PointCloud([[0, 0, 0]], t_offset=[0.2], scan_duration=0.1)
    c = PointCloud([[1, 2, 3], [4, 5, 6]], [10, 20], [0.0, 0.05], [3, 4], 1.0, 0.1)
    assert len(c) == 2
    assert c[1].ring == 4 and c[1].x == 4.0
    assert c.end_stamp == pytest.approx(1.1)
    sub = c.subset([1])
    assert sub[0] == c[1]


# -- symmetric eigen --------------------------------------------------------------

def test_eigen_identity():
    vals, _ = sym_eigen3(np.eye(3))
    np.testing.assert_allclose(vals, [1, 1, 1], atol=1e-15)


def test_eigen_diagonal():
    vals, vecs = sym_eigen3(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_allclose(vals, [3, 2, 1], atol=1e-15)
    np.testing.assert_allclose(np.abs(vecs), [[0, 0, 1], [1, 0, 0], [0, 1, 0]], atol=1e-15)


def test_eigen_matches_cubic_roots(rng):
    for _ in range(1000):
        a = rng.normal(size=(3, 3))
        a = a + a.T
        vals, _ = sym_eigen3(a)
        np.testing.assert_allclose(vals, cubic_eigenvalues(a), atol=1e-8)


def test_eigen_reconstruction_and_order(rng):
    mats = rng.normal(size=(500, 3, 3))
    mats = mats + np.transpose(mats, (0, 2, 1))
    vals, vecs = sym_eigen3_batch(mats)
    assert np.all(np.diff(vals, axis=1) <= 0)
    rec = np.einsum("nij,nj,nkj->nik", vecs, vals, vecs)
    scale = np.linalg.norm(mats, axis=(1, 2))
    assert np.all(np.linalg.norm(rec - mats, axis=(1, 2)) <= 1e-8 * scale)
    np.testing.assert_allclose(np.einsum("nji,njk->nik", vecs, vecs), np.broadcast_to(np.eye(3), mats.shape),
                               atol=1e-10)


def test_eigen_repeated_and_rank_deficient():
    n = np.array([1.0, 2.0, 2.0]) / 3.0
    a = np.outer(n, n)
    vals, vecs = sym_eigen3(a)
    np.testing.assert_allclose(vals, [1, 0, 0], atol=1e-14)
    assert abs(abs(vecs[:, 0] @ n) - 1) < 1e-12


def test_solve6(rng):
    A = rng.normal(size=(6, 6))
    H = A @ A.T + np.eye(6)
    x = rng.normal(size=6)
    np.testing.assert_allclose(solve6(H, H @ x), x, atol=1e-10)
