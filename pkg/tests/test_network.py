import numpy as np
import pytest
from pydantic import ValidationError

from src.models.dataset import Dataset
from src.models.network import Mlp, TrainConfig, binary_model, binary_weights, logistic_regression
from src.network.engine import (
    calibrate_temperature,
    evaluate,
    forward,
    input_gradient,
    load_model,
    logits_of,
    median_confidence,
    predict,
    save_model,
    softmax,
    train,
)
from src.utils.error_handler import ArgumentError, CalibrationError, EmptyInputError, TrainingError


class TestForward:
    def test_hand_set_network(self, hand_mlp):
        result = forward(hand_mlp, np.array([0.2, 0.6]))
        # hidden: relu([0.2, 0.6, -0.3]) = [0.2, 0.6, 0]
        np.testing.assert_allclose(result.features[1], [0.2, 0.6, 0.0])
        np.testing.assert_allclose(result.logits, [0.2, 0.7])
        np.testing.assert_allclose(result.probs, softmax(np.array([0.2, 0.7])))

    def test_features_start_with_the_input(self, small_mlp):
        x = np.linspace(0, 1, 6)
        result = forward(small_mlp, x)
        assert len(result.features) == small_mlp.depth
        np.testing.assert_array_equal(result.features[0], x)

    def test_batch_matches_single(self, small_mlp):
        X = np.random.default_rng(0).random((6, 5))
        batch = forward(small_mlp, X)
        for j in range(5):
            np.testing.assert_allclose(batch.logits[:, j], forward(small_mlp, X[:, j]).logits)

    def test_temperature_flattens(self, hand_mlp):
        x = np.array([0.2, 0.6])
        sharp = forward(hand_mlp, x).probs.max()
        flat = forward(hand_mlp.with_temperature(10.0), x).probs.max()
        assert flat < sharp

    @pytest.mark.parametrize('shift', [-50.0, 3.0, 700.0])
    def test_softmax_ignores_a_constant_shift(self, shift):
        logits = np.random.default_rng(2).standard_normal((4, 6))
        np.testing.assert_allclose(softmax(logits + shift), softmax(logits), rtol=1e-12)
        np.testing.assert_allclose(softmax(logits + shift, 0.3), softmax(logits, 0.3), rtol=1e-12)

    def test_wrong_input_size(self, hand_mlp):
        with pytest.raises(ArgumentError):
            forward(hand_mlp, np.zeros(3))

    def test_ties_go_to_the_lowest_class(self):
        model = Mlp([(np.zeros((3, 2)), np.zeros(3))])
        np.testing.assert_array_equal(predict(model, np.ones((2, 4))), [0, 0, 0, 0])


class TestInputGradient:
    def test_matches_finite_differences(self, small_mlp):
        model = small_mlp.with_temperature(0.7)
        x = np.random.default_rng(1).random(6)
        h = 1e-6
        for t in range(3):
            numeric = np.array([
                (forward(model, x + h * e).probs[t] - forward(model, x - h * e).probs[t]) / (2 * h)
                for e in np.eye(6)
            ])
            np.testing.assert_allclose(input_gradient(model, x, t), numeric, atol=1e-7)

    def test_batch_matches_single(self, small_mlp):
        X = np.random.default_rng(2).random((6, 4))
        targets = np.array([0, 2, 1, 2])
        batch = input_gradient(small_mlp, X, targets)
        for j in range(4):
            np.testing.assert_allclose(batch[:, j], input_gradient(small_mlp, X[:, j], targets[j]))

    def test_dead_units_give_zero_gradient(self):
        model = Mlp([(np.zeros((2, 3)), -np.ones(2)), (np.ones((2, 2)), np.zeros(2))])
        np.testing.assert_array_equal(input_gradient(model, np.full(3, 0.5), 1), 0.0)

    def test_target_out_of_range(self, hand_mlp):
        with pytest.raises(ArgumentError):
            input_gradient(hand_mlp, np.zeros(2), 2)


class TestTrain:
    @staticmethod
    def _config(**overrides):
        values = dict(epochs=20, learning_rate_schedule=[(0, 0.1)], batch_size=8, seed=3)
        values.update(overrides)
        return TrainConfig(**values)

    def test_separates_blobs(self, blobs):
        model = train(logistic_regression(8, 2, seed=0), blobs, self._config(), progress=False)
        assert evaluate(model, blobs) >= 0.95

    def test_hidden_layers(self, blobs):
        model = train(Mlp.initialize([8, 6, 2], seed=1), blobs, self._config(), progress=False)
        assert evaluate(model, blobs) >= 0.95

    def test_deterministic_for_a_seed(self, blobs):
        first = train(logistic_regression(8), blobs, self._config(epochs=3), progress=False)
        second = train(logistic_regression(8), blobs, self._config(epochs=3), progress=False)
        np.testing.assert_array_equal(first.layers[0][0], second.layers[0][0])

    def test_leaves_the_start_model_untouched(self, blobs):
        start = logistic_regression(8)
        before = start.layers[0][0].copy()
        train(start, blobs, self._config(epochs=1), progress=False)
        np.testing.assert_array_equal(start.layers[0][0], before)

    def test_history(self, blobs):
        history = []
        train(logistic_regression(8), blobs, self._config(epochs=4, learning_rate_schedule=[(0, 0.1), (2, 0.01)]),
              history=history, progress=False)
        assert [h['epoch'] for h in history] == [1, 2, 3, 4]
        assert [h['learning_rate'] for h in history] == [0.1, 0.1, 0.01, 0.01]
        assert history[-1]['loss'] < history[0]['loss']

    def test_divergence(self, blobs):
        model = Mlp([(np.full((2, 8), 1e308), np.zeros(2))])
        with pytest.raises(TrainingError):
            train(model, blobs, self._config(epochs=1), progress=False)

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((8, 0)), np.zeros(0, dtype=int), (2, 4, 1), classes=2)
        with pytest.raises(EmptyInputError):
            train(logistic_regression(8), empty, self._config(), progress=False)

    def test_label_out_of_range(self, blobs):
        with pytest.raises(ArgumentError):
            train(Mlp.initialize([8, 1]), blobs, self._config(), progress=False)

    def test_one_full_batch_step_is_plain_gradient_descent(self, blobs):
        start = logistic_regression(8, 2, seed=4)
        stepped = train(start, blobs, self._config(epochs=1, momentum=0.0, batch_size=blobs.n,
                                                   learning_rate_schedule=[(0, 0.5)]), progress=False)
        W, b = start.layers[0]
        X = blobs.data.astype(np.float64)
        residual = softmax(W @ X + b[:, None])
        residual[blobs.labels, np.arange(blobs.n)] -= 1.0

        np.testing.assert_allclose(stepped.layers[0][0], W - 0.5 * residual @ X.T / blobs.n, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(stepped.layers[0][1], b - 0.5 * residual.mean(axis=1), rtol=1e-10, atol=1e-12)

    def test_weight_decay_spares_the_biases(self, blobs):
        start = logistic_regression(8, 2, seed=4)
        config = dict(epochs=1, momentum=0.0, batch_size=blobs.n, learning_rate_schedule=[(0, 0.5)])
        plain = train(start, blobs, self._config(**config), progress=False)
        decayed = train(start, blobs, self._config(l2_penalty=0.2, **config), progress=False)

        np.testing.assert_allclose(decayed.layers[0][0], plain.layers[0][0] - 0.5 * 0.2 * start.layers[0][0],
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_array_equal(decayed.layers[0][1], plain.layers[0][1])


class TestTrainConfig:
    def test_schedule_must_start_at_zero(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate_schedule=[(1, 0.1)])

    def test_schedule_must_increase(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate_schedule=[(0, 0.1), (5, 0.01), (5, 0.001)])

    def test_momentum_below_one(self):
        with pytest.raises(ValidationError):
            TrainConfig(momentum=1.0)

    def test_rate_at(self):
        config = TrainConfig(learning_rate_schedule=[(0, 0.1), (10, 0.01)])
        assert config.rate_at(9) == 0.1
        assert config.rate_at(10) == 0.01


class TestCalibration:
    def test_reaches_the_target_median(self, blobs):
        model = train(logistic_regression(8), blobs, TrainConfig(epochs=10, learning_rate_schedule=[(0, 0.1)]),
                      progress=False)
        calibrated = calibrate_temperature(model, blobs, 0.9)
        assert abs(median_confidence(logits_of(calibrated, blobs.data), calibrated.temperature) - 0.9) <= 1e-4
        np.testing.assert_array_equal(calibrated.layers[0][0], model.layers[0][0])

    def test_calibration_keeps_predictions(self, blobs):
        model = logistic_regression(8, seed=4)
        calibrated = calibrate_temperature(model, blobs, 0.6)
        np.testing.assert_array_equal(predict(calibrated, blobs.data), predict(model, blobs.data))

    def test_unreachable_target(self, blobs):
        uniform = Mlp([(np.zeros((2, 8)), np.zeros(2))])
        with pytest.raises(CalibrationError):
            calibrate_temperature(uniform, blobs, 0.95)


class TestModels:
    def test_save_and_load(self, tmp_path, small_mlp):
        model = small_mlp.with_temperature(0.25)
        loaded = load_model(save_model(model, tmp_path / 'model.json'))
        assert loaded.sizes == model.sizes
        assert loaded.temperature == 0.25
        for (W, b), (W2, b2) in zip(model.layers, loaded.layers):
            np.testing.assert_allclose(W2, W, atol=1e-7)
            np.testing.assert_allclose(b2, b, atol=1e-7)

    def test_layer_shapes_must_chain(self):
        with pytest.raises(ArgumentError):
            Mlp([(np.zeros((3, 2)), np.zeros(3)), (np.zeros((2, 4)), np.zeros(2))])

    def test_binary_helpers(self):
        w = np.array([0.5, -1.0, 2.0])
        recovered_w, recovered_b = binary_weights(binary_model(w, 0.3))
        np.testing.assert_allclose(recovered_w, w)
        assert recovered_b == pytest.approx(0.3)

    def test_binary_weights_needs_two_classes(self, small_mlp):
        with pytest.raises(ArgumentError):
            binary_weights(small_mlp)

    def test_glorot_bounds(self):
        model = Mlp.initialize([10, 6], seed=0)
        assert np.abs(model.layers[0][0]).max() <= np.sqrt(6.0 / 16)
        np.testing.assert_array_equal(model.layers[0][1], 0.0)
