import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ketslab.errors import DimensionError, DivergenceError
from ketslab.training import (
    LabeledDataset,
    compute_update,
    cross_entropy,
    evaluate,
    flat_gradient,
    init_model,
    local_train,
    softmax,
)


def loss_at(model, flat, x, y):
    return cross_entropy(model.unflatten(flat).forward(x)[-1], y)


def finite_difference_grad(model, x, y, eps=1e-5):
    theta = model.flatten()
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += eps
        down[i] -= eps
        g[i] = (loss_at(model, up, x, y) - loss_at(model, down, x, y)) / (2 * eps)
    return g


class TestModel:
    def test_init_deterministic(self):
        a, b = init_model([20, 32, 5], 7), init_model([20, 32, 5], 7)
        np.testing.assert_array_equal(a.flatten(), b.flatten())

    def test_parameter_counts(self):
        assert init_model([4, 3], 0).n_params == 15
        assert init_model([20, 32, 5], 0).flatten().size == 837

    def test_init_bounds(self):
        m = init_model([16, 8, 3], 1)
        assert np.all(np.abs(m.weights[0]) <= 1 / 4)
        assert np.all(np.abs(m.weights[1]) <= 1 / np.sqrt(8))
        assert all(np.all(b == 0) for b in m.biases)

    def test_flatten_round_trip(self):
        m = init_model([5, 4, 3], 2)
        v = np.random.default_rng(0).standard_normal(m.n_params)
        np.testing.assert_array_equal(m.unflatten(v).flatten(), v)

    def test_unflatten_wrong_size(self):
        with pytest.raises(DimensionError):
            init_model([2, 2], 0).unflatten(np.zeros(3))

    @settings(max_examples=50)
    @given(st.integers(1, 20), st.integers(2, 6), st.integers(0, 1000))
    def test_softmax_rows_sum_to_one(self, n, c, seed):
        z = np.random.default_rng(seed).standard_normal((n, c)) * 30
        np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-9)


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            sizes = [5, 4, 3] if trial % 2 == 0 else [int(rng.integers(2, 6)), int(rng.integers(2, 5)), 3]
            model = init_model(sizes, trial)
            # shift biases so no ReLU sits exactly at its kink
            model.biases[0] += 0.05
            x = rng.standard_normal((10, sizes[0]))
            y = rng.integers(0, sizes[-1], 10)
            analytic = flat_gradient(model, x, y)
            numeric = finite_difference_grad(model, x, y)
            rel = np.max(np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric)))
            assert rel <= 1e-4

    def test_single_step_matches_hand_computed_update(self):
        # linear softmax, two samples, one full batch
        model = init_model([2, 2], 3)
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([0, 1])
        g = finite_difference_grad(model, x, y)
        out = local_train(model, LabeledDataset(x, y), epochs=1, batch_size=2, lr=0.5, seed=0)
        np.testing.assert_allclose(out.flatten(), model.flatten() - 0.5 * g, atol=1e-8)


class TestLocalTrain:
    data = LabeledDataset(np.random.default_rng(0).standard_normal((30, 4)), np.arange(30) % 3)

    def test_zero_epochs_and_zero_lr_are_identity(self):
        m = init_model([4, 5, 3], 0)
        np.testing.assert_array_equal(local_train(m, self.data, 0, 8, 0.1).flatten(), m.flatten())
        np.testing.assert_array_equal(local_train(m, self.data, 3, 8, 0.0).flatten(), m.flatten())

    def test_input_not_mutated_and_deterministic(self):
        m = init_model([4, 5, 3], 0)
        before = m.flatten().copy()
        a = local_train(m, self.data, 2, 7, 0.1, momentum=0.9, seed=4)
        b = local_train(m, self.data, 2, 7, 0.1, momentum=0.9, seed=4)
        np.testing.assert_array_equal(m.flatten(), before)
        np.testing.assert_array_equal(a.flatten(), b.flatten())

    def test_loss_non_increasing_on_convex_instance(self):
        m = init_model([4, 3], 1)
        x, y = self.data.features, self.data.labels
        losses = []
        for _ in range(15):
            losses.append(cross_entropy(m.forward(x)[-1], y))
            m = local_train(m, self.data, 1, len(self.data), 0.05)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        m = init_model([4, 3], 0)
        bad = LabeledDataset(np.full((4, 4), 1e200), np.zeros(4, dtype=int))
        with pytest.raises(DivergenceError):
            local_train(m, bad, 3, 2, 1e10)

    def test_feature_mismatch(self):
        with pytest.raises(DimensionError):
            local_train(init_model([3, 2], 0), self.data, 1, 4, 0.1)


class TestUpdateAndEvaluate:
    def test_compute_update(self):
        g = init_model([3, 2], 0)
        assert np.all(compute_update(g.copy(), g) == 0)
        zero = g.unflatten(np.zeros(g.n_params))
        local = zero.copy()
        local.weights[0][1, 0] = 0.5
        expected = np.zeros(g.n_params)
        expected[2] = 0.5
        np.testing.assert_array_equal(compute_update(local, zero), expected)
        other = init_model([3, 2], 9)
        np.testing.assert_array_equal(compute_update(other, g), other.flatten() - g.flatten())

    def test_compute_update_shape_mismatch(self):
        with pytest.raises(DimensionError):
            compute_update(init_model([3, 2], 0), init_model([3, 3], 0))

    def test_constant_predictor(self):
        m = init_model([2, 3], 0)
        m = m.unflatten(np.zeros(m.n_params))
        m.biases[0][:] = [0.0, 5.0, 0.0]
        test = LabeledDataset(np.random.default_rng(1).standard_normal((5, 2)), np.ones(5, dtype=int))
        assert evaluate(m, test) == 1.0

    def test_ties_go_to_lowest_class(self):
        m = init_model([2, 3], 0)
        m = m.unflatten(np.zeros(m.n_params))
        test = LabeledDataset(np.zeros((3, 2)), np.zeros(3, dtype=int))
        assert evaluate(m, test) == 1.0

    def test_linear_model_separates_two_points(self):
        data = LabeledDataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]))
        m = local_train(init_model([2, 2], 0), data, 200, 2, 0.5)
        assert evaluate(m, data) == 1.0

    def test_untrained_model_near_chance(self):
        rng = np.random.default_rng(2)
        test = LabeledDataset(rng.standard_normal((1000, 10)), rng.integers(0, 4, 1000))
        assert abs(evaluate(init_model([10, 16, 4], 3), test) - 0.25) <= 0.1
