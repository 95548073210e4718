"""Autodiff core: construction, broadcasting, adjoints, and the gradient checker."""

import numpy as np
import pytest

from echoir import tensor as T
from echoir.tensor import ConfigError, ShapeError, Tensor, grad_check, tensor_new


class TestConstruction:
    def test_tensor_new_shape_and_grad(self):
        t = tensor_new((2, 3), range(6), requires_grad=True)
        assert t.shape == (2, 3)
        assert t.dtype == np.float64
        np.testing.assert_array_equal(t.grad, np.zeros((2, 3)))

    def test_length_mismatch_message(self):
        with pytest.raises(ShapeError, match="length mismatch 5 vs 6"):
            tensor_new((2, 3), range(5))

    def test_standard_precision(self):
        assert tensor_new((2,), [1, 2], precision="standard").dtype == np.float32


class TestBroadcasting:
    def test_broadcast_shape(self):
        assert T.broadcast_shape((2, 3, 4), (3, 1)) == (2, 3, 4)
        with pytest.raises(ShapeError):
            T.broadcast_shape((2, 3), (4,))

    def test_add_broadcast_gradient_sums(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((3,)), requires_grad=True)
        T.tsum(a + b).backward()
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


class TestAdjoints:
    def test_sigmoid_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        T.tsum(T.sigmoid(x)).backward()
        np.testing.assert_allclose(x.grad, 0.25)

    def test_matmul_sum_pattern(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        T.tsum(a @ b).backward()
        np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)))

    def test_shared_subexpression_counted_once_per_path(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x
        T.tsum(y + y).backward()  # d/dx 2x^2 = 4x
        np.testing.assert_allclose(x.grad, [12.0])

    def test_getitem_repeated_indices_accumulate(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        T.tsum(x[np.array([0, 0, 2])]).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0, 0.0])

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert y.node is None and not y.requires_grad

    def test_deep_chain_is_iterative(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        T.tsum(y).backward()
        assert x.grad[0] == 1.0


class TestNumerics:
    def test_layer_norm_moments(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((16, 5, 5)) * 3 + 2)
        y = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), axis=0, eps=1e-12).data
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-6)

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(2).standard_normal((3, 7)) * 50)
        np.testing.assert_allclose(T.softmax(x).data.sum(axis=-1), 1.0)

    def test_conv2d_matches_direct_loop(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        ref = np.zeros((3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    ref[o, i, j] = (xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_conv_extent_floor_and_error(self):
        assert T.conv_output_extent(8, 3, 2, 1) == 4
        assert T.conv_output_extent(7, 3, 2, 1) == 4
        with pytest.raises(ConfigError):
            T.conv_output_extent(2, 5, 1, 0)

    def test_count_flops(self):
        with T.count_flops() as box:
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert box[0] == 24


class TestGradCheck:
    def test_sigmoid_sum_passes(self):
        assert grad_check(lambda t: T.tsum(T.sigmoid(t)), Tensor(np.zeros(3))) < 1e-8

    def test_corrupted_adjoint_is_detected(self):
        def bad_square(a):
            return T._make("square", a.data ** 2, (a,), lambda g: (3.0 * a.data * g,))

        assert grad_check(lambda t: T.tsum(bad_square(t)), Tensor(np.array([0.5, -1.0]))) > 0.1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_coordinate(self):
        with pytest.raises(FloatingPointError, match="coordinate 1"):
            grad_check(lambda t: T.tsum(T.log(t)), Tensor(np.array([1.0, 1e-7])), step=1e-6)
