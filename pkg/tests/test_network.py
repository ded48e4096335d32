import numpy as np
import pytest

from qsarnn.exceptions import NumericalDivergence, ShapeError, StaleTrace
from qsarnn.network import (
    Gradients,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    forward_masked,
    init_network,
    load_model,
    loss_cross_entropy,
    loss_mse,
    predict,
    sample_dropout_multipliers,
    save_model,
)


def finite_difference_gradients(params, X, targets, mask, multipliers, h=1e-5):
    """Central-difference oracle for the masked cross entropy."""

    def loss_at(p):
        trace = forward_masked(p, X, multipliers)
        return loss_cross_entropy(trace.outputs, targets, mask)

    grads = Gradients(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )
    for l in range(params.n_layers):
        for arrays, out in ((params.weights, grads.weights), (params.biases, grads.biases)):
            it = np.nditer(arrays[l], flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                p = params.copy()
                getattr(p, "weights" if arrays is params.weights else "biases")[l][idx] += h
                up = loss_at(p)
                p = params.copy()
                getattr(p, "weights" if arrays is params.weights else "biases")[l][idx] -= h
                down = loss_at(p)
                out[l][idx] = (up - down) / (2 * h)
    return grads


def max_relative_error(analytic, numeric, floor=1e-4):
    """Worst-case relative error; gradients below the floor compare absolutely."""
    worst = 0.0
    for a_list, n_list in ((analytic.weights, numeric.weights), (analytic.biases, numeric.biases)):
        for a, n in zip(a_list, n_list):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_case(config, n_cases, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_cases, config.input_dim))
    targets = rng.integers(0, 2, size=(n_cases, config.output_dim)).astype(float)
    mask = (rng.random((n_cases, config.output_dim)) < 0.7).astype(float)
    mask[mask.sum(axis=1) == 0, 0] = 1.0  # at least one observed output per case
    return X, targets, mask


def kink_free_case(config, params, n_cases, seed, dropout_rates=None, margin=1e-3):
    """Draw (data, dropout multipliers) where no rectifier sits near its kink.

    Central differences are meaningless at a relu kink, and z == 0 exactly
    happens whenever a whole layer is dead (zero biases) or dropout masks
    out every input of a unit, so data and masks are redrawn jointly until
    the evaluation point is differentiable. Returns (X, targets, mask,
    multipliers); multipliers is None when dropout_rates is None.
    """
    for attempt in range(200):
        case_seed = seed + 1000 * attempt
        X, targets, mask = random_case(config, n_cases, case_seed)
        multipliers = None
        if dropout_rates is not None:
            multipliers = sample_dropout_multipliers(
                params, n_cases, dropout_rates, np.random.default_rng(case_seed + 7)
            )
        if config.activation != "relu":
            return X, targets, mask, multipliers
        trace = forward_masked(params, X, multipliers)
        if not trace.zs[:-1] or all(np.abs(z).min() > margin for z in trace.zs[:-1]):
            return X, targets, mask, multipliers
    raise RuntimeError("could not find a kink-free evaluation point")


class TestNetworkConfig:
    def test_default_dropout(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(8, 8))
        assert config.dropout_rates == (0.0, 0.0, 0.0)

    def test_layer_dims(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(8, 6), output_dim=2)
        assert config.layer_dims == [(8, 4), (6, 8), (2, 6)]

    def test_range_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=4, hidden_sizes=(8,), dropout_rates=(0.9, 0.0))
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=4, hidden_sizes=(8,), init_scale=0.5)
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=4, hidden_sizes=(8, 8, 8, 8))
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=4, hidden_sizes=(8,), activation="tanh")

    def test_dict_round_trip(self):
        config = NetworkConfig(
            input_dim=4, hidden_sizes=(8,), output_dim=3, activation="relu",
            dropout_rates=(0.1, 0.3), init_scale=0.1, bottom_scale_log_multiplier=0.5,
        )
        assert NetworkConfig.from_dict(config.to_dict()) == config


class TestInitNetwork:
    def test_bottom_scale_multiplier(self):
        config = NetworkConfig(
            input_dim=1000, hidden_sizes=(1000,), init_scale=0.1,
            bottom_scale_log_multiplier=1.0,
        )
        params = init_network(config, seed=0)
        observed = params.weights[0].std()
        assert observed == pytest.approx(0.1 * np.e, rel=0.05)
        assert params.weights[1].std() == pytest.approx(0.1, rel=0.05)

    def test_zero_multiplier_identity(self):
        config = NetworkConfig(input_dim=500, hidden_sizes=(500,), init_scale=0.1)
        params = init_network(config, seed=1)
        assert params.weights[0].std() == pytest.approx(0.1, rel=0.05)

    def test_biases_zero(self):
        config = NetworkConfig(input_dim=5, hidden_sizes=(7,), output_dim=2)
        params = init_network(config, seed=2)
        for b in params.biases:
            np.testing.assert_array_equal(b, 0.0)

    def test_deterministic(self):
        config = NetworkConfig(input_dim=5, hidden_sizes=(7,))
        a = init_network(config, seed=3)
        b = init_network(config, seed=3)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)


class TestForward:
    def test_zero_dropout_train_equals_infer(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(6, 5), output_dim=2)
        params = init_network(config, seed=0)
        X = np.random.default_rng(1).normal(size=(8, 4))
        train_trace = forward(params, X, dropout_rates=(0.0, 0.0, 0.0), rng=0)
        infer_trace = forward(params, X)
        np.testing.assert_array_equal(train_trace.outputs, infer_trace.outputs)

    def test_single_layer_sigmoid_of_zero(self):
        params = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
        trace = forward(params, np.array([[0.0]]))
        assert trace.outputs[0, 0] == 0.5

    def test_relu_hidden_values(self):
        # identity first layer exposes the rectifier on z = [-1, 2]
        params = NetworkParams(
            [np.eye(2), np.ones((1, 2))],
            [np.zeros(2), np.zeros(1)],
            activation="relu",
        )
        trace = forward(params, np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(trace.activations[0], [[0.0, 2.0]])

    def test_shape_error(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(6,))
        params = init_network(config, seed=0)
        with pytest.raises(ShapeError):
            forward(params, np.zeros((3, 5)))

    def test_numerical_divergence(self):
        params = NetworkParams([np.array([[1e308]])], [np.array([0.0])])
        with pytest.raises(NumericalDivergence):
            forward(params, np.array([[1e10]]))

    def test_train_mode_deterministic_per_seed(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(6,), dropout_rates=(0.25, 0.5))
        params = init_network(config, seed=0)
        X = np.random.default_rng(2).normal(size=(10, 4))
        t1 = forward(params, X, dropout_rates=(0.25, 0.5), rng=7)
        t2 = forward(params, X, dropout_rates=(0.25, 0.5), rng=7)
        np.testing.assert_array_equal(t1.outputs, t2.outputs)


class TestDropoutCalibration:
    def test_inverted_dropout_mean_preserving(self):
        # E[activation * multiplier] == activation for a linear unit
        params = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
        rng = np.random.default_rng(0)
        for p in (0.25, 0.5, 0.75):
            multipliers = sample_dropout_multipliers(params, 100_000, (p,), rng)
            assert multipliers[0].mean() == pytest.approx(1.0, abs=0.01)

    def test_multiplier_values(self):
        params = NetworkParams([np.array([[1.0]])], [np.array([0.0])])
        multipliers = sample_dropout_multipliers(
            params, 1000, (0.5,), np.random.default_rng(0)
        )
        assert set(np.unique(multipliers[0])) == {0.0, 2.0}


class TestLosses:
    def test_cross_entropy_half(self):
        assert loss_cross_entropy(
            np.array([[0.5]]), np.array([[1.0]])
        ) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_full_mask_zero(self):
        rng = np.random.default_rng(0)
        y = rng.random((4, 3))
        t = rng.integers(0, 2, size=(4, 3)).astype(float)
        assert loss_cross_entropy(y, t, np.zeros((4, 3))) == 0.0

    def test_perfect_prediction_negligible(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert loss_cross_entropy(t, t) <= 2 * 1e-12 * t.size

    def test_mse_cases(self):
        assert loss_mse(np.array([[1.0]]), np.array([[1.0]])) == 0.0
        assert loss_mse(np.array([[1.0]]), np.array([[0.0]])) == 0.5

    def test_mse_matches_scalar_loop(self):
        rng = np.random.default_rng(5)
        y = rng.random((3, 2))
        t = rng.random((3, 2))
        m = rng.integers(0, 2, size=(3, 2)).astype(float)
        expected = 0.0
        for i in range(3):
            for j in range(2):
                expected += 0.5 * m[i, j] * (y[i, j] - t[i, j]) ** 2
        assert loss_mse(y, t, m) == pytest.approx(expected, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_cross_entropy(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            loss_mse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2)))


class TestBackward:
    def test_output_delta_is_y_minus_t(self):
        config = NetworkConfig(input_dim=3, hidden_sizes=(4,), output_dim=2)
        params = init_network(config, seed=0)
        X, targets, _ = random_case(config, 5, seed=1)
        trace = forward(params, X)
        grads = backward(params, trace, targets, None)
        np.testing.assert_allclose(
            grads.biases[-1], (trace.outputs - targets).sum(axis=0), atol=1e-12
        )

    def test_all_masked_zero_gradients(self):
        config = NetworkConfig(input_dim=3, hidden_sizes=(4,), output_dim=2)
        params = init_network(config, seed=0)
        X, targets, _ = random_case(config, 1, seed=2)
        trace = forward(params, X)
        grads = backward(params, trace, targets, np.zeros((1, 2)))
        for g in grads.weights + grads.biases:
            np.testing.assert_array_equal(g, 0.0)

    def test_unobserved_target_locality(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(5,), output_dim=3)
        params = init_network(config, seed=3)
        X, targets, mask = random_case(config, 6, seed=4)
        mask[2, 1] = 0.0
        trace = forward(params, X)
        base_loss = loss_cross_entropy(trace.outputs, targets, mask)
        base_grads = backward(params, trace, targets, mask)
        mutated = targets.copy()
        mutated[2, 1] = 1.0 - mutated[2, 1]
        assert loss_cross_entropy(trace.outputs, mutated, mask) == base_loss
        new_grads = backward(params, trace, mutated, mask)
        for a, b in zip(
            base_grads.weights + base_grads.biases, new_grads.weights + new_grads.biases
        ):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("activation", ["sigmoid", "relu"])
    @pytest.mark.parametrize("hidden", [(), (6,), (5, 4), (5, 4, 3)])
    def test_gradients_match_finite_differences(self, activation, hidden):
        config = NetworkConfig(
            input_dim=4,
            hidden_sizes=hidden,
            output_dim=2,
            activation=activation,
            init_scale=0.2,
        )
        params = init_network(config, seed=11)
        X, targets, mask, _ = kink_free_case(config, params, 5, seed=12)
        trace = forward(params, X)
        analytic = backward(params, trace, targets, mask)
        numeric = finite_difference_gradients(params, X, targets, mask, None)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_gradients_with_fixed_dropout_masks(self):
        config = NetworkConfig(
            input_dim=4,
            hidden_sizes=(6, 5),
            output_dim=2,
            dropout_rates=(0.25, 0.5, 0.5),
            init_scale=0.2,
        )
        params = init_network(config, seed=13)
        X, targets, mask = random_case(config, 5, seed=14)
        multipliers = sample_dropout_multipliers(
            params, 5, config.dropout_rates, np.random.default_rng(15)
        )
        trace = forward_masked(params, X, multipliers)
        analytic = backward(params, trace, targets, mask)
        numeric = finite_difference_gradients(params, X, targets, mask, multipliers)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_stale_trace(self):
        config_a = NetworkConfig(input_dim=3, hidden_sizes=(4,))
        config_b = NetworkConfig(input_dim=3, hidden_sizes=(5,))
        trace = forward(init_network(config_a, 0), np.zeros((2, 3)))
        with pytest.raises(StaleTrace):
            backward(init_network(config_b, 0), trace, np.zeros((2, 1)))


class TestPredict:
    def test_deterministic_and_matches_forward(self):
        config = NetworkConfig(input_dim=4, hidden_sizes=(6,), output_dim=2)
        params = init_network(config, seed=0)
        X = np.random.default_rng(0).normal(size=(7, 4))
        p1 = predict(params, X)
        p2 = predict(params, X)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(p1, forward(params, X).outputs)

    def test_monotone_in_positive_weight_model(self):
        params = NetworkParams([np.array([[2.0]])], [np.array([0.0])])
        probs = predict(params, np.array([[-1.0], [0.0], [1.0]]))
        assert probs[0, 0] < probs[1, 0] < probs[2, 0]

    def test_strictly_inside_unit_interval(self):
        params = NetworkParams([np.array([[100.0]])], [np.array([0.0])])
        probs = predict(params, np.array([[-100.0], [100.0]]))
        assert 0.0 < probs.min() and probs.max() < 1.0


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        config = NetworkConfig(
            input_dim=5, hidden_sizes=(7, 3), output_dim=2, activation="relu"
        )
        params = init_network(config, seed=42)
        path = tmp_path / "model.bin"
        save_model(path, params, config=config, seed=42,
                   descriptor_names=("a", "b", "c", "d", "e"),
                   norm_stats_ref="norm_stats.json")
        loaded, header = load_model(path)
        assert header["seed"] == 42
        assert header["norm_stats"] == "norm_stats.json"
        assert header["config"]["hidden_sizes"] == [7, 3]
        assert loaded.activation == "relu"
        for a, b in zip(loaded.weights, params.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.biases, params.biases):
            np.testing.assert_array_equal(a, b)
