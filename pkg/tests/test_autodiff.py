"""Gradient correctness of every differentiable primitive against central
finite differences (the independent oracle), plus tape mechanics."""

import numpy as np
import pytest

from geomflow.neuralnet import autodiff as ad
from geomflow.neuralnet import geom_ops as go
from geomflow.neuralnet.autodiff import Tape, Tensor, backward
from tests_helpers_grad import check_gradients


RNG = np.random.default_rng(42)


class TestArithmeticGradients:
    def test_add_broadcast(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(ad.add(t[0], t[1]), ad.add(t[0], t[1]))),
            [RNG.standard_normal((4, 5)), RNG.standard_normal(5)],
        )

    def test_sub_mul_div(self):
        check_gradients(
            lambda t: ad.mean(ad.div(ad.mul(t[0], t[1]), ad.sub(t[2], ad.constant(-3.0)))),
            [RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4)), RNG.random((3, 4))],
        )

    def test_matmul_2d(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(ad.matmul(t[0], t[1]), ad.matmul(t[0], t[1]))),
            [RNG.standard_normal((6, 3)), RNG.standard_normal((3, 4))],
        )

    def test_matmul_batched(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(ad.matmul(t[0], t[1]), ad.constant(np.ones((2, 3, 3))))),
            [RNG.standard_normal((2, 3, 3)), RNG.standard_normal((2, 3, 3))],
        )

    def test_sum_mean_axes(self):
        check_gradients(
            lambda t: ad.sum_(ad.mul(ad.mean(t[0], axis=0), ad.sum_(t[0], axis=0))),
            [RNG.standard_normal((5, 4))],
        )

    def test_reshape_slice_concat(self):
        def build(t):
            a = ad.reshape(t[0], (2, 6))
            left = ad.slice_last(a, 0, 3)
            right = ad.slice_last(a, 3, 6)
            return ad.mean(ad.mul(ad.concat_last(left, right), a))

        check_gradients(build, [RNG.standard_normal((3, 4))])

    def test_sqrt(self):
        check_gradients(lambda t: ad.mean(ad.sqrt_(t[0])), [RNG.random((4, 4)) + 0.5])


class TestNeuralGradients:
    def test_relu_away_from_kink(self):
        x = RNG.standard_normal((5, 5))
        x[np.abs(x) < 0.05] = 0.5
        check_gradients(lambda t: ad.mean(ad.relu(t[0])), [x])

    def test_gelu(self):
        check_gradients(lambda t: ad.mean(ad.gelu(t[0])), [RNG.standard_normal((5, 5))])

    def test_layer_norm_core(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(ad.layer_norm_core(t[0]), t[1])),
            [RNG.standard_normal((4, 6)), RNG.standard_normal(6)],
        )

    def test_softmax(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(ad.softmax_last(t[0]), t[1])),
            [RNG.standard_normal((4, 5)), RNG.standard_normal((4, 5))],
        )

    def test_mse(self):
        check_gradients(
            lambda t: ad.mse_loss(t[0], t[1]),
            [RNG.standard_normal((6, 3)), RNG.standard_normal((6, 3))],
        )

    def test_dropout_train_mode(self):
        # identical mask on every evaluation (fresh generator, same seed)
        def build(t):
            return ad.mean(ad.dropout(t[0], 0.4, np.random.default_rng(17), training=True))

        check_gradients(build, [RNG.standard_normal((6, 6))])

    def test_dropout_eval_identity(self):
        x = Tensor(RNG.standard_normal((3, 3)))
        out = ad.dropout(x, 0.5, None, training=False)
        assert out is x


class TestGeometricGradients:
    def test_sphere_normalize(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(go.sphere_normalize(t[0]), t[1])),
            [RNG.standard_normal((5, 3)) + 2.0, RNG.standard_normal((5, 3))],
        )

    def test_disk_project_both_branches(self):
        pts = np.vstack([0.5 * RNG.standard_normal((3, 2)), 3.0 + RNG.random((3, 2))])
        check_gradients(
            lambda t: ad.mean(ad.mul(go.disk_project(t[0]), t[1])),
            [pts, RNG.standard_normal((6, 2))],
        )

    def test_sphere_tangent_project(self):
        check_gradients(
            lambda t: ad.mean(
                ad.mul(go.sphere_tangent_project(t[0], t[1]), t[1])
            ),
            [RNG.standard_normal((4, 3)), RNG.standard_normal((4, 3))],
        )

    def test_sphere_exp(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(go.sphere_exp(t[0], t[1]), t[2])),
            [
                RNG.standard_normal((4, 3)),
                0.8 * RNG.standard_normal((4, 3)),
                RNG.standard_normal((4, 3)),
            ],
        )

    @pytest.mark.parametrize(
        "op", [go.rot_coeff_a, go.rot_coeff_b, go.rot_coeff_c, go.cos_sqrt]
    )
    def test_rodrigues_coefficients(self, op):
        check_gradients(lambda t: ad.mean(op(t[0])), [RNG.random((4, 4)) * 8.0 + 0.01])

    def test_lincomb_basis(self):
        from geomflow.liealg import SO3_BASIS

        check_gradients(
            lambda t: ad.mean(ad.mul(go.lincomb_basis(t[0], SO3_BASIS), t[1])),
            [RNG.standard_normal((4, 3)), RNG.standard_normal((4, 3, 3))],
        )

    def test_exp_so3_composition(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(go.exp_so3_t(t[0]), t[1])),
            [RNG.standard_normal((3, 3)), RNG.standard_normal((3, 3, 3))],
        )

    def test_exp_se3_composition(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(go.exp_se3_t(t[0]), t[1])),
            [RNG.standard_normal((3, 6)), RNG.standard_normal((3, 4, 4))],
        )

    def test_assemble_se3(self):
        check_gradients(
            lambda t: ad.mean(ad.mul(go.assemble_se3(t[0], t[1]), t[2])),
            [
                RNG.standard_normal((3, 3, 3)),
                RNG.standard_normal((3, 3)),
                RNG.standard_normal((3, 4, 4)),
            ],
        )

    def test_lie_step_all_inputs(self):
        from geomflow.geometry import SO3

        g0 = SO3().random_point(3, n=4)

        def build(t):
            return ad.mean(ad.mul(go.lie_step_t(t[0], t[1], t[2], 3), t[3]))

        check_gradients(
            build,
            [g0, 0.5 * RNG.standard_normal((4, 3)), np.array(0.3), RNG.standard_normal((4, 9))],
        )


class TestTapeMechanics:
    def test_half_norm_squared_gradient(self):
        x = ad.parameter(RNG.standard_normal(7))
        tape = Tape()
        with tape:
            xm = ad.reshape(x, (1, 7))
            loss = ad.mul(ad.constant(0.5), ad.sum_(ad.mul(xm, xm)))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, x.data, atol=1e-14)

    def test_layernorm_constant_row(self):
        x = ad.parameter(np.full((1, 8), 3.7))
        tape = Tape()
        with tape:
            out = ad.layer_norm_core(x)
            loss = ad.sum_(ad.mul(out, ad.constant(RNG.standard_normal((1, 8)))))
        assert np.allclose(out.data, 0.0)
        backward(tape, loss)
        assert abs(np.sum(x.grad)) < 1e-12

    def test_reused_tensor_accumulates(self):
        x = ad.parameter(np.array([[2.0]]))
        tape = Tape()
        with tape:
            y = ad.add(ad.mul(x, x), ad.mul(ad.constant(3.0), x))
            loss = ad.sum_(y)
        backward(tape, loss)
        assert abs(x.grad[0, 0] - (2 * 2.0 + 3.0)) < 1e-12

    def test_each_node_visited_once(self):
        # gradient of x -> (x + x) is exactly 2, not 4
        x = ad.parameter(np.array([[1.5]]))
        tape = Tape()
        with tape:
            loss = ad.sum_(ad.add(x, x))
        backward(tape, loss)
        assert x.grad[0, 0] == 2.0

    def test_no_tape_no_recording(self):
        x = ad.parameter(np.ones((2, 2)))
        out = ad.mul(x, x)
        assert out._backward is None

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_backward_needs_scalar(self):
        x = ad.parameter(np.ones(3))
        tape = Tape()
        with tape:
            y = ad.mul(x, x)
        with pytest.raises(ValueError):
            backward(tape, y)
