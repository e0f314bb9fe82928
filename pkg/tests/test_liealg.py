import numpy as np
import pytest

from geomflow.geometry import OffManifoldBase
from geomflow.liealg import (
    exp_se3,
    exp_so3,
    hat_se3,
    hat_so3,
    lie_step,
    log_so3,
    taylor_expm,
    vee_se3,
    vee_so3,
)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestHatVee:
    def test_basis_e3(self):
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert np.array_equal(hat_so3([0.0, 0.0, 1.0]), expected)

    def test_basis_e1(self):
        expected = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        assert np.array_equal(hat_so3([1.0, 0.0, 0.0]), expected)

    def test_zero(self):
        assert np.array_equal(hat_so3([0.0, 0.0, 0.0]), np.zeros((3, 3)))

    def test_vee_hat_identity_exact(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal((200, 3))
        assert np.array_equal(vee_so3(hat_so3(c)), c)

    def test_hat_vee_identity_on_skew(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((50, 3, 3))
        K = 0.5 * (A - np.swapaxes(A, -1, -2))
        assert np.array_equal(hat_so3(vee_so3(K)), K)

    def test_se3_roundtrip(self):
        rng = np.random.default_rng(2)
        c = rng.standard_normal((20, 3))
        u = rng.standard_normal((20, 3))
        xi = hat_se3(c, u)
        c2, u2 = vee_se3(xi)
        assert np.array_equal(c2, c) and np.array_equal(u2, u)

    def test_hat_is_cross_product(self):
        rng = np.random.default_rng(3)
        c = rng.standard_normal(3)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(hat_so3(c) @ x, np.cross(c, x), atol=1e-15)


class TestExpSO3:
    def test_z_quarter_turn(self):
        np.testing.assert_allclose(exp_so3([0.0, 0.0, np.pi / 2]), rot_z(np.pi / 2), atol=1e-15)

    def test_zero_is_identity_exact(self):
        assert np.array_equal(exp_so3([0.0, 0.0, 0.0]), np.eye(3))

    def test_matches_taylor_expm(self):
        rng = np.random.default_rng(4)
        c = rng.standard_normal((1000, 3))
        c *= (rng.uniform(0.0, np.pi, size=(1000, 1))) / np.linalg.norm(c, axis=-1, keepdims=True)
        R = exp_so3(c)
        R_ref = taylor_expm(hat_so3(c))
        assert np.max(np.abs(R - R_ref)) < 1e-10

    def test_in_so3_for_large_inputs(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal((1000, 3))
        c *= rng.uniform(0.0, 10.0, size=(1000, 1)) / np.linalg.norm(c, axis=-1, keepdims=True)
        R = exp_so3(c)
        orth = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-1, -2))
        det = np.abs(np.linalg.det(R) - 1.0)
        assert np.max(orth + det) <= 1e-12

    def test_small_angle_branch_accuracy(self):
        for norm in [1e-9, 1e-7, 2e-6]:
            c = np.array([norm, 0.0, 0.0])
            R = exp_so3(c)
            R_ref = taylor_expm(hat_so3(c))
            assert np.max(np.abs(R - R_ref)) < 1e-14

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(6)
        c = rng.standard_normal((500, 3))
        c *= rng.uniform(0.0, np.pi - 0.1, size=(500, 1)) / np.linalg.norm(c, axis=-1, keepdims=True)
        c2 = log_so3(exp_so3(c))
        assert np.max(np.abs(c2 - c)) < 1e-10


class TestExpSE3:
    def test_pure_translation_exact(self):
        u = np.array([1.0, -2.0, 3.0])
        G = exp_se3(np.zeros(3), u)
        expected = np.eye(4)
        expected[:3, 3] = u
        assert np.array_equal(G, expected)

    def test_matches_taylor_expm(self):
        rng = np.random.default_rng(7)
        c = rng.standard_normal((300, 3))
        u = rng.standard_normal((300, 3))
        G = exp_se3(c, u)
        G_ref = taylor_expm(hat_se3(c, u))
        assert np.max(np.abs(G - G_ref)) < 1e-10

    def test_rotation_block_feasible(self):
        rng = np.random.default_rng(8)
        G = exp_se3(rng.standard_normal((200, 3)), rng.standard_normal((200, 3)))
        R = G[..., :3, :3]
        orth = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-1, -2))
        assert np.max(orth) <= 1e-12
        assert np.array_equal(G[..., 3, :], np.broadcast_to([0.0, 0.0, 0.0, 1.0], (200, 4)))


class TestLieStep:
    def test_identity_quarter_turn(self):
        out = lie_step(np.eye(3).reshape(9), [0.0, 0.0, np.pi / 2], 1.0)
        np.testing.assert_allclose(out.reshape(3, 3), rot_z(np.pi / 2), atol=1e-15)

    def test_zero_dt_exact(self):
        g = np.linalg.qr(np.random.default_rng(9).standard_normal((3, 3)))[0]
        if np.linalg.det(g) < 0:
            g[:, 0] *= -1
        flat = g.reshape(9)
        assert np.array_equal(lie_step(flat, [0.1, 0.2, 0.3], 0.0), flat)

    def test_one_parameter_subgroup(self):
        # oracle: direct matrix products of the closed-form z-rotation
        c = np.array([0.0, 0.0, 0.3])
        dt = 0.1
        g0 = np.eye(3).reshape(9)
        two_steps = lie_step(lie_step(g0, c, dt), c, dt)
        one_step = lie_step(g0, c, 2 * dt)
        np.testing.assert_allclose(two_steps, one_step, atol=1e-14)
        np.testing.assert_allclose(one_step.reshape(3, 3), rot_z(0.06), atol=1e-14)

    def test_membership_preserved_over_100_steps(self):
        rng = np.random.default_rng(10)
        g = np.eye(3).reshape(9)
        from geomflow.geometry import SO3

        k = SO3()
        res_prev = k.residual_totals(g)
        for _ in range(100):
            g = lie_step(g, rng.standard_normal(3), 0.05)
            res = k.residual_totals(g)
            assert res <= res_prev + 1e-12
            res_prev = max(res_prev, res)
        assert k.residual_totals(g) <= 1e-12

    def test_se3_step(self):
        g = np.eye(4).reshape(16)
        out = lie_step(g, [0.0, 0.0, np.pi / 2, 1.0, 0.0, 0.0], 1.0).reshape(4, 4)
        np.testing.assert_allclose(out[:3, :3], rot_z(np.pi / 2), atol=1e-15)
        assert np.max(np.abs(out[3] - [0, 0, 0, 1])) == 0.0

    def test_off_group_raises(self):
        with pytest.raises(OffManifoldBase):
            lie_step(2.0 * np.eye(3).reshape(9), [0.0, 0.0, 1.0], 0.1)


class TestTaylorExpm:
    def test_against_scipy(self):
        from scipy.linalg import expm as scipy_expm

        rng = np.random.default_rng(11)
        for _ in range(50):
            A = rng.standard_normal((4, 4)) * rng.uniform(0.1, 3.0)
            np.testing.assert_allclose(taylor_expm(A), scipy_expm(A), atol=1e-11)
