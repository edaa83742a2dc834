"""Tests for the tensor core, its gradients and the Adam optimizer."""
import math

import numpy as np
import pytest

from src.core.exceptions import BatchSizeError, ContractError, DimensionError, NumericalError
from src.numeric import tensor as T
from src.numeric.gradcheck import gradient_check, max_relative_error
from src.numeric.optim import Adam, Parameter, adam_step
from src.numeric.tensor import RunningStats, Tape, Tensor, backward

TOLERANCE = 1e-5


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum(T.mul(out, Tensor(weights)))


class TestForward:
    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_conv2d_identity_kernel(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        kernel = Tensor(np.eye(2).reshape(1, 1, 2, 2))
        out = T.conv2d(x, kernel)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 5.0

    def test_conv2d_output_size_with_stride_and_padding(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 7, 7)))
        kernels = Tensor(rng.standard_normal((4, 3, 3, 3)))
        assert T.conv2d(x, kernels, stride=2, padding=1).shape == (2, 4, 4, 4)

    def test_conv2d_channel_mismatch(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 4)))
        kernels = Tensor(rng.standard_normal((2, 1, 3, 3)))
        with pytest.raises(DimensionError):
            T.conv2d(x, kernels)

    def test_max_pool(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        out = T.max_pool2d(x, 2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[5, 7], [13, 15]])

    def test_matmul_shape_errors(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))

    def test_softmax_cross_entropy_uniform(self):
        loss = T.softmax_cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_batch_norm_train_standardizes(self, rng):
        x = Tensor(rng.standard_normal((16, 3)) * 5.0 + 2.0)
        out = T.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-12)

    def test_batch_norm_updates_running_stats(self):
        x = Tensor(np.array([[0.0], [2.0]]))
        stats = RunningStats.create(1, dtype=np.float64, momentum=0.1)
        T.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), running_stats=stats)
        assert stats.mean[0] == pytest.approx(0.1)
        assert stats.var[0] == pytest.approx(0.9 + 0.1 * 1.0)

    def test_batch_norm_needs_two_rows(self):
        with pytest.raises(BatchSizeError):
            T.batch_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)))

    def test_batch_norm_eval_needs_stats(self):
        with pytest.raises(ContractError):
            T.batch_norm(Tensor(np.ones((4, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="eval")

    def test_non_finite_result_raises(self):
        with pytest.raises(NumericalError):
            Tensor([np.inf]) + 1.0

    def test_integer_data_becomes_float(self):
        assert Tensor([1, 2, 3]).dtype == np.float64

    def test_float32_is_preserved(self):
        t = Tensor(np.ones(3, dtype=np.float32))
        assert (t * 2.0).dtype == np.float32


class TestBackward:
    def test_nothing_recorded_without_tape(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        out = a * 3.0
        assert out.requires_grad is False

    def test_simple_product_gradient(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(a * a)
        backward(tape, loss)
        np.testing.assert_array_equal(a.grad, [2.0, 4.0])

    def test_gradients_accumulate(self):
        a = Tensor([3.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = T.sum(a * 2.0)
            backward(tape, loss)
        np.testing.assert_array_equal(a.grad, [4.0])

    def test_shared_input_sums_both_paths(self):
        a = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(a * a + a)
        backward(tape, loss)
        np.testing.assert_array_equal(a.grad, [5.0])

    def test_non_scalar_loss_rejected(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = a * 2.0
        with pytest.raises(ContractError):
            backward(tape, out)

    def test_loss_from_other_tape_rejected(self):
        a = Tensor([1.0], requires_grad=True)
        with Tape():
            loss = T.sum(a * 2.0)
        with pytest.raises(ContractError):
            backward(Tape(), loss)


class TestGradientCheck:
    """Analytic gradients against central differences in float64."""

    def test_elementwise_chain(self, rng):
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
        b = Tensor(rng.uniform(0.5, 2.0, (4,)))
        w = rng.standard_normal((3, 4))

        def fn():
            out = T.div(T.sub(T.mul(a, b), T.power(b, 2.0)), T.sqrt(a)) + T.neg(a)
            return weighted_sum(out, w)

        assert gradient_check(fn, [a, b]) < TOLERANCE

    def test_relu_away_from_kink(self, rng):
        values = rng.standard_normal((5, 5))
        values[np.abs(values) < 0.1] = 0.5
        a = Tensor(values)
        w = rng.standard_normal((5, 5))
        assert gradient_check(lambda: weighted_sum(T.relu(a), w), [a]) < TOLERANCE

    def test_reductions_and_reshapes(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)))
        w = rng.standard_normal((4, 3))

        def fn():
            m = T.mean(a, axis=0)
            s = T.sum(T.transpose(m), axis=1, keepdims=True)
            r = T.reshape(T.flatten(a), (6, 4))
            return T.sum(T.mul(T.transpose(m), Tensor(w))) + T.sum(s) + T.mean(r * r)

        assert gradient_check(fn, [a]) < TOLERANCE

    def test_matmul(self, rng):
        a = Tensor(rng.standard_normal((3, 5)))
        b = Tensor(rng.standard_normal((5, 2)))
        w = rng.standard_normal((3, 2))
        assert gradient_check(lambda: weighted_sum(T.matmul(a, b), w), [a, b]) < TOLERANCE

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 2)])
    def test_conv2d(self, rng, stride, padding):
        x = Tensor(rng.standard_normal((2, 2, 5, 5)))
        kernels = Tensor(rng.standard_normal((3, 2, 3, 3)))
        out_shape = T.conv2d(x, kernels, stride, padding).shape
        w = rng.standard_normal(out_shape)
        fn = lambda: weighted_sum(T.conv2d(x, kernels, stride, padding), w)  # noqa: E731
        assert gradient_check(fn, [x, kernels]) < TOLERANCE

    def test_max_pool(self, rng):
        x = Tensor(rng.permutation(64).astype(np.float64).reshape(1, 1, 8, 8) / 10.0)
        w = rng.standard_normal((1, 1, 4, 4))
        assert gradient_check(lambda: weighted_sum(T.max_pool2d(x, 2), w), [x]) < TOLERANCE

    def test_batch_norm_train(self, rng):
        x = Tensor(rng.standard_normal((6, 3)))
        gamma = Tensor(rng.uniform(0.5, 1.5, 3))
        beta = Tensor(rng.standard_normal(3))
        w = rng.standard_normal((6, 3))
        fn = lambda: weighted_sum(T.batch_norm(x, gamma, beta), w)  # noqa: E731
        assert gradient_check(fn, [x, gamma, beta]) < TOLERANCE

    def test_batch_norm_eval(self, rng):
        stats = RunningStats(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
        x = Tensor(rng.standard_normal((4, 3)))
        gamma = Tensor(rng.uniform(0.5, 1.5, 3))
        beta = Tensor(rng.standard_normal(3))
        w = rng.standard_normal((4, 3))
        fn = lambda: weighted_sum(  # noqa: E731
            T.batch_norm(x, gamma, beta, mode="eval", running_stats=stats), w
        )
        assert gradient_check(fn, [x, gamma, beta]) < TOLERANCE

    def test_softmax_cross_entropy(self, rng):
        logits = Tensor(rng.standard_normal((5, 4)))
        labels = np.array([0, 3, 1, 1, 2])
        assert gradient_check(lambda: T.softmax_cross_entropy(logits, labels), [logits]) < TOLERANCE

    def test_relative_error_floor(self):
        assert max_relative_error(np.array([1e-9]), np.array([0.0]), floor=1e-4) == pytest.approx(1e-5)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        param = Parameter.create(np.array([1.0, -2.0]), "w")
        param.value.grad = np.array([0.5, -3.0])
        adam_step([param], lr=0.01)
        np.testing.assert_allclose(param.data, [1.0 - 0.01, -2.0 + 0.01], rtol=1e-6)

    def test_step_clears_gradients(self):
        param = Parameter.create(np.ones(2), "w")
        param.value.grad = np.ones(2)
        adam_step([param], lr=0.1)
        assert param.grad is None
        assert param.step_count == 1

    def test_second_step_without_backward_raises(self):
        param = Parameter.create(np.ones(2), "w")
        optimizer = Adam([param], lr=0.1)
        param.value.grad = np.ones(2)
        optimizer.step()
        after_first = param.data.copy()
        with pytest.raises(ContractError, match="w"):
            optimizer.step()
        np.testing.assert_array_equal(param.data, after_first)
        assert param.step_count == 1

    def test_two_steps_match_scalar_recurrence_exactly(self):
        lr, beta1, beta2, eps = 0.05, 0.9, 0.999, 1e-8
        grads = [0.7, -1.3]
        param = Parameter.create(np.array([0.25]), "w")
        x, m, v = 0.25, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            param.value.grad = np.array([g])
            adam_step([param], lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
            assert param.data[0] == x
            assert param.adam_m[0] == m and param.adam_v[0] == v

    def test_zero_learning_rate_leaves_parameters(self, rng):
        start = rng.normal(size=(3, 4))
        param = Parameter.create(start, "w")
        optimizer = Adam([param], lr=0.0)
        for _ in range(3):
            param.value.grad = rng.normal(size=(3, 4))
            optimizer.step()
        np.testing.assert_array_equal(param.data, start)
        assert param.step_count == 3

    def test_missing_gradient_updates_nothing(self):
        ready = Parameter.create(np.ones(2), "ready")
        ready.value.grad = np.ones(2)
        missing = Parameter.create(np.ones(2), "missing")
        with pytest.raises(ContractError, match="missing"):
            adam_step([ready, missing], lr=0.1)
        np.testing.assert_array_equal(ready.data, np.ones(2))
        assert ready.step_count == 0

    def test_reset_forgets_moments(self):
        param = Parameter.create(np.ones(1), "w")
        optimizer = Adam([param], lr=0.1)
        param.value.grad = np.ones(1)
        optimizer.step()
        optimizer.reset()
        assert param.step_count == 0
        np.testing.assert_array_equal(param.adam_m, np.zeros(1))
        param.value.grad = np.full(1, 4.0)
        before = param.data.copy()
        optimizer.step()
        np.testing.assert_allclose(before - param.data, [0.1], rtol=1e-6)

    def test_minimizes_quadratic(self):
        param = Parameter.create(np.array([3.0]), "x")
        optimizer = Adam([param], lr=0.1)
        for _ in range(500):
            with Tape() as tape:
                loss = T.sum(param.value * param.value)
            backward(tape, loss)
            optimizer.step()
        assert abs(param.data[0]) < 0.1
