"""
Network configuration, forward pass, losses and end-to-end gradients
"""

import math

import numpy as np
import pytest

from conftest import finite_differences, numeric_gradient, relative_error
from gdcnn.errors import DataError, NonFiniteError, ShapeError, StateError
from gdcnn.model import (ModelConfig, backward, forward, init_params, loss, loss_bce, loss_bce_grad,
                         loss_ce, loss_ce_grad, param_shapes, predict)


def as_float64(params):
    return {name: values.astype(np.float64) for name, values in params.items()}


class TestModelConfig:
    def test_default_size_trace(self):
        config = ModelConfig()
        assert config.size_trace() == [137, 135, 67, 65, 32, 30, 15, 13, 6]
        assert config.featuremap_size == 13
        assert config.flat_features == 128 * 36

    def test_minimum_input_sizes(self):
        ModelConfig(input_size=38, head="gap")
        ModelConfig(input_size=46, head="dense")
        with pytest.raises(ValueError):
            ModelConfig(input_size=37, head="gap")
        with pytest.raises(ValueError):
            ModelConfig(input_size=45, head="dense")

    def test_param_shapes(self):
        gap = param_shapes(ModelConfig())
        assert gap["conv1.weight"] == (32, 1, 3, 3)
        assert gap["conv4.bias"] == (128,)
        assert gap["classifier.weight"] == (2, 128)
        assert "classifier.bias" not in gap

        dense = param_shapes(ModelConfig(head="dense"))
        assert dense["dense1.weight"] == (512, 4608)
        assert dense["dense2.weight"] == (1, 512)
        assert dense["dense2.bias"] == (1,)


class TestInit:
    def test_seeded(self, tiny_gap):
        a, b = init_params(tiny_gap, seed=3), init_params(tiny_gap, seed=3)
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_biases_zero(self, tiny_dense):
        params = init_params(tiny_dense, seed=1)
        for name, values in params.items():
            if name.endswith(".bias"):
                assert not values.any(), name

    def test_he_std(self):
        weights = init_params(ModelConfig(), seed=0)["conv2.weight"]
        assert weights.size >= 10 ** 4
        expected = math.sqrt(2.0 / (32 * 9))
        assert abs(weights.std() - expected) < 0.1 * expected


class TestForward:
    def test_zero_image_dense_is_half(self, tiny_dense):
        params = init_params(tiny_dense, seed=0)
        prediction = predict(params, tiny_dense, np.zeros((1, 46, 46), np.float32))
        assert prediction.probability == 0.5
        assert prediction.label == 0

    def test_gap_probs_sum_to_one(self, tiny_gap, rng):
        params = init_params(tiny_gap, seed=0)
        prediction, trace = forward(params, tiny_gap, rng.random((1, 46, 46)).astype(np.float32))
        assert abs(prediction.probs.sum() - 1.0) < 1e-6
        assert prediction.label == int(np.argmax(prediction.probs))
        assert trace.featuremaps.shape == (4, 2, 2)

    def test_eval_is_deterministic(self):
        config = ModelConfig(input_size=46, conv_filters=(4, 4, 4, 4), dropout_rate=0.8)
        params = init_params(config, seed=2)
        image = np.random.default_rng(0).random((1, 46, 46)).astype(np.float32)
        a, b = predict(params, config, image), predict(params, config, image)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_dropout_only_in_train(self, rng):
        config = ModelConfig(input_size=46, conv_filters=(4, 4, 4, 4), head="dense", dense_hidden=16, dropout_rate=0.5)
        params = init_params(config, seed=4)
        image = rng.random((1, 46, 46)).astype(np.float32)
        _, eval_trace = forward(params, config, image, mode="eval")
        _, train_trace = forward(params, config, image, mode="train", seed=9)
        assert eval_trace.dropout_mask is None
        assert train_trace.dropout_mask is not None

    def test_rejects_shape(self, tiny_gap):
        with pytest.raises(ShapeError, match="image"):
            predict(init_params(tiny_gap), tiny_gap, np.zeros((1, 45, 46), np.float32))

    def test_rejects_pixel_range(self, tiny_gap):
        with pytest.raises(DataError):
            predict(init_params(tiny_gap), tiny_gap, np.full((1, 46, 46), 1.5, np.float32))

    def test_non_finite_names_layer(self, tiny_gap, rng):
        params = init_params(tiny_gap)
        params["conv1.weight"][0, 0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError, match="conv1"):
            predict(params, tiny_gap, rng.random((1, 46, 46)).astype(np.float32))


class TestLosses:
    def test_bce(self):
        assert loss_bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-4)
        assert loss_bce(1.0, 1) <= 1e-6
        assert loss_bce(0.0, 0) <= 1e-6
        assert math.isfinite(loss_bce(0.0, 1))

    def test_bce_grad(self, rng):
        for p, label in zip(rng.uniform(0.01, 0.99, size=100), rng.integers(0, 2, size=100)):
            numeric = (loss_bce(p + 1e-6, int(label)) - loss_bce(p - 1e-6, int(label))) / 2e-6
            assert loss_bce_grad(p, int(label)) == pytest.approx(numeric, rel=1e-4)

    def test_ce(self):
        assert loss_ce(np.array([0.5, 0.5]), 0) == pytest.approx(math.log(2))

    def test_ce_equals_bce_for_two_classes(self, rng):
        for p1 in rng.uniform(0.01, 0.99, size=20):
            probs = np.array([1 - p1, p1])
            for label in (0, 1):
                assert loss_ce(probs, label) == pytest.approx(loss_bce(p1, label), abs=1e-6)

    def test_ce_grad(self, rng):
        for _ in range(100):
            p1 = rng.uniform(0.01, 0.99)
            probs = np.array([1 - p1, p1])
            label = int(rng.integers(0, 2))
            numeric = numeric_gradient(lambda: loss_ce(probs, label), probs, 1e-6)
            np.testing.assert_allclose(loss_ce_grad(probs, label), numeric, rtol=1e-4, atol=1e-9)


class TestBackward:
    def _check(self, config, label, seed=5):
        params = as_float64(init_params(config, seed=seed))
        image = np.random.default_rng(seed).random((1, config.input_size, config.input_size))

        def objective():
            prediction, _ = forward(params, config, image, mode="train", seed=seed)
            return loss(prediction, config, label)

        _, trace = forward(params, config, image, mode="train", seed=seed)
        grads = backward(params, config, trace, label)
        assert list(grads) == list(params)

        errors, checked = [], []
        for name in params:
            assert grads[name].shape == params[name].shape
            numeric, kinked = finite_differences(objective, params[name])
            errors.append(relative_error(grads[name], numeric).ravel())
            checked.append(~kinked.ravel())
        errors, checked = np.concatenate(errors), np.concatenate(checked)
        # entries sitting on a ReLU kink have no derivative to compare
        assert checked.any()
        assert np.mean(errors[checked] < 1e-3) >= 0.99

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("head", ["gap", "dense"])
    def test_finite_differences(self, head, seed):
        config = ModelConfig(input_size=46, conv_filters=(2, 2, 2, 2), head=head, dense_hidden=6, dropout_rate=0.0)
        self._check(config, seed % 2, seed=seed)

    @pytest.mark.parametrize("label", [0, 1])
    def test_wider_filters(self, tiny_gap, tiny_dense, label):
        self._check(tiny_gap, label)
        self._check(tiny_dense, label)

    def test_through_dropout_mask(self, tiny_gap, tiny_dense):
        self._check(tiny_gap.model_copy(update={"dropout_rate": 0.5}), 1, seed=8)
        self._check(tiny_dense.model_copy(update={"dropout_rate": 0.5}), 0, seed=8)

    def test_repeatable(self, tiny_gap, rng):
        params = init_params(tiny_gap, seed=0)
        _, trace = forward(params, tiny_gap, rng.random((1, 46, 46)).astype(np.float32), mode="train", seed=1)
        a, b = backward(params, tiny_gap, trace, 1), backward(params, tiny_gap, trace, 1)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_fit_sample_has_small_gradient(self, tiny_dense):
        params = init_params(tiny_dense, seed=0)
        params["dense2.bias"][:] = 40.0
        image = np.zeros((1, 46, 46), np.float32)
        prediction, trace = forward(params, tiny_dense, image, mode="train", seed=0)
        assert loss(prediction, tiny_dense, 1) < 1e-6
        grads = backward(params, tiny_dense, trace, 1)
        assert math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())) < 1e-3

    def test_missing_trace(self, tiny_gap):
        with pytest.raises(StateError):
            backward(init_params(tiny_gap), tiny_gap, None, 0)
