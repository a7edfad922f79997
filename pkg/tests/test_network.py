"""Tests for the trainable message-propagation network.

Layer forward, loss, analytic gradients, the optimizer, and the
per-window training loop each get their own class. Gradients are checked
against central finite differences on small instances.
"""

import math

import numpy as np
import pytest

from streamfill.errors import (
    ConfigurationError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from streamfill.graph import (
    SimilarityGraph,
    knn_graph,
    make_knn_builder,
    mean_fill,
    mean_fill_matrix,
)
from streamfill.network import (
    AdamOptimizer,
    ModelState,
    MsgPropLayerParams,
    TrainConfig,
    init_model_state,
    loss_and_gradients,
    mpin_forward,
    mpin_loss,
    msgprop_layer_forward,
    split_validation,
    train_impute,
)
from streamfill.propagation import apply_bound, feaprop_step
from streamfill.records import chunk_from_arrays


def identity_params(dim):
    """Parameters that make one layer reproduce plain neighbor propagation."""
    return MsgPropLayerParams(
        w_self=np.zeros((dim, dim)),
        w_neigh=np.eye(dim),
        b_msg=np.zeros(dim),
        w_rec=np.eye(dim),
        b_rec=np.zeros(dim),
    )


def correlation_fixture():
    """Three instances; the first misses its leading attribute.

    The neighbor weights 0.8 and 0.2 are injected directly instead of
    being derived from distances.
    """
    values = np.array([[np.nan, 5.0, 6.0], [8.0, 5.0, 3.0], [3.0, 2.0, 1.0]])
    mask = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 1]], dtype=np.uint8)
    weights = np.array([
        [0.0, 0.8, 0.2],
        [0.8, 0.0, 0.0],
        [0.2, 0.0, 0.0],
    ])
    return values, mask, SimilarityGraph.from_weight_matrix(weights)


class TestLayerForward:
    def test_correlation_weight_golden(self):
        values, mask, graph = correlation_fixture()
        filled = mean_fill_matrix(values, mask)
        x_tilde, x_bounded = msgprop_layer_forward(
            filled, graph, identity_params(3), filled, mask,
            activation=False, propagation="norm",
        )
        np.testing.assert_allclose(x_tilde[0], [7.0, 4.4, 2.6], atol=1e-9)
        np.testing.assert_allclose(x_bounded[0], [7.0, 5.0, 6.0], atol=1e-9)

    def test_identity_config_matches_plain_propagation(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            d = int(rng.integers(2, 6))
            values = rng.normal(size=(n, d))
            mask = (rng.random((n, d)) > 0.3).astype(np.uint8)
            mask[:, 0] = 1
            filled = mean_fill_matrix(np.where(mask, values, np.nan), mask)
            graph = knn_graph(filled, k=int(rng.integers(1, n)))
            _, bounded = msgprop_layer_forward(
                filled, graph, identity_params(d), filled, mask,
                activation=False, propagation="norm",
            )
            expected = apply_bound(feaprop_step(filled, graph), filled, mask)
            np.testing.assert_allclose(bounded, expected, atol=1e-9)

    def test_isolated_node_outputs_reconstruction_bias(self):
        params = identity_params(2)
        params.w_self = np.zeros((2, 2))
        params.b_rec = np.array([3.0, -1.0])
        graph = SimilarityGraph.from_weight_matrix(np.zeros((2, 2)))
        x = np.array([[5.0, 5.0], [6.0, 6.0]])
        mask = np.zeros((2, 2), dtype=np.uint8)
        x_tilde, _ = msgprop_layer_forward(
            x, graph, params, x, mask, activation=False, propagation="norm"
        )
        np.testing.assert_allclose(x_tilde[0], [3.0, -1.0])

    def test_activation_clips_negative_messages(self):
        params = identity_params(1)
        graph = SimilarityGraph.from_weight_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        x = np.array([[-4.0], [-4.0]])
        mask = np.zeros((2, 1), dtype=np.uint8)
        with_act, _ = msgprop_layer_forward(
            x, graph, params, x, mask, activation=True, propagation="norm"
        )
        without, _ = msgprop_layer_forward(
            x, graph, params, x, mask, activation=False, propagation="norm"
        )
        np.testing.assert_allclose(with_act, [[0.0], [0.0]])
        np.testing.assert_allclose(without, [[-4.0], [-4.0]])

    def test_shape_checks(self):
        graph = SimilarityGraph.from_weight_matrix(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            msgprop_layer_forward(
                np.zeros((3, 2)), graph, identity_params(2),
                np.zeros((3, 2)), np.zeros((3, 2)),
            )
        with pytest.raises(ValueError):
            msgprop_layer_forward(
                np.zeros((2, 3)), graph, identity_params(2),
                np.zeros((2, 2)), np.zeros((2, 2)),
            )

    def test_unknown_propagation_mode(self):
        graph = SimilarityGraph.from_weight_matrix(np.zeros((2, 2)))
        with pytest.raises(ConfigurationError):
            msgprop_layer_forward(
                np.zeros((2, 2)), graph, identity_params(2),
                np.zeros((2, 2)), np.zeros((2, 2)), propagation="median",
            )


class TestNetworkForward:
    def test_fully_observed_chunk_passes_through(self):
        rng = np.random.default_rng(43)
        x = rng.normal(size=(6, 3))
        mask = np.ones((6, 3), dtype=np.uint8)
        graph = knn_graph(x, k=2)
        state = init_model_state(3, TrainConfig(seed=7))
        _, x1, _, x2 = mpin_forward(x, mask, graph, state)
        np.testing.assert_array_equal(x1, x)
        np.testing.assert_array_equal(x2, x)

    def test_observed_entries_survive_both_layers(self):
        rng = np.random.default_rng(44)
        values = rng.normal(size=(8, 4))
        mask = (rng.random((8, 4)) > 0.4).astype(np.uint8)
        mask[:, 0] = 1
        filled = mean_fill_matrix(np.where(mask, values, np.nan), mask)
        graph = knn_graph(filled, k=3)
        state = init_model_state(4, TrainConfig(seed=8))
        _, _, _, x2 = mpin_forward(filled, mask, graph, state)
        obs = mask.astype(bool)
        np.testing.assert_array_equal(x2[obs], values[obs])

    def test_identity_config_equals_two_propagation_rounds(self):
        rng = np.random.default_rng(45)
        values = rng.normal(size=(7, 3))
        mask = (rng.random((7, 3)) > 0.3).astype(np.uint8)
        mask[:, 0] = 1
        filled = mean_fill_matrix(np.where(mask, values, np.nan), mask)
        graph = knn_graph(filled, k=2)
        state = ModelState(identity_params(3), identity_params(3), rng_seed=0)
        _, x1, _, x2 = mpin_forward(
            filled, mask, graph, state, activation=False, propagation="norm"
        )
        step1 = apply_bound(feaprop_step(filled, graph), filled, mask)
        step2 = apply_bound(feaprop_step(step1, graph), filled, mask)
        np.testing.assert_allclose(x1, step1, atol=1e-9)
        np.testing.assert_allclose(x2, step2, atol=1e-9)


class TestLoss:
    def test_masked_mse_oracle(self):
        rng = np.random.default_rng(47)
        x0 = rng.normal(size=(5, 3))
        xt1 = rng.normal(size=(5, 3))
        xt2 = rng.normal(size=(5, 3))
        mask = rng.random((5, 3)) > 0.4
        count = mask.sum()
        d1 = d2 = 0.0
        for i in range(5):
            for d in range(3):
                if mask[i, d]:
                    d1 += (xt1[i, d] - x0[i, d]) ** 2
                    d2 += (xt2[i, d] - x0[i, d]) ** 2
        expected = 0.5 * d1 / count + 2.0 * d2 / count
        got = mpin_loss(x0, mask, xt1, xt2, lambda1=0.5, lambda2=2.0)
        assert abs(got - expected) < 1e-12

    def test_empty_mask_undefined(self):
        z = np.zeros((2, 2))
        with pytest.raises(UndefinedMetricError):
            mpin_loss(z, np.zeros((2, 2), dtype=bool), z, z)

    def test_perfect_reconstruction_is_zero(self):
        x = np.random.default_rng(48).normal(size=(4, 2))
        mask = np.ones((4, 2), dtype=bool)
        assert mpin_loss(x, mask, x.copy(), x.copy()) == 0.0


def numeric_gradient(loss_fn, array, eps=1e-6):
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = loss_fn()
        flat[idx] = orig - eps
        lo = loss_fn()
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2.0 * eps)
    return grad


class TestGradients:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(51)
        for _ in range(3):
            n = int(rng.integers(5, 9))
            d = 3
            values = rng.normal(size=(n, d))
            mask = (rng.random((n, d)) > 0.3).astype(np.uint8)
            mask[:, 0] = 1
            filled = mean_fill_matrix(np.where(mask, values, np.nan), mask)
            graph = knn_graph(filled, k=2)
            state = init_model_state(d, TrainConfig(seed=int(rng.integers(1000)), hidden_dim=5))
            m_train = mask.astype(bool)
            loss, grads, _ = loss_and_gradients(filled, m_train, graph, state)

            def loss_fn():
                return mpin_loss(
                    filled,
                    m_train,
                    *forward_tilde(filled, m_train, graph, state),
                )

            def forward_tilde(x0, m, g, s):
                xt1, _, xt2, _ = mpin_forward(x0, m, g, s)
                return xt1, xt2

            for name, array in state.named_parameters():
                numeric = numeric_gradient(loss_fn, array)
                denom = np.maximum(np.abs(numeric) + np.abs(grads[name]), 1e-8)
                rel = np.abs(numeric - grads[name]) / denom
                assert rel.max() < 1e-4, f"{name}: worst rel err {rel.max():.2e}"

    def test_loss_value_matches_forward(self):
        rng = np.random.default_rng(53)
        values = rng.normal(size=(6, 3))
        mask = (rng.random((6, 3)) > 0.3).astype(np.uint8)
        mask[:, 0] = 1
        filled = mean_fill_matrix(np.where(mask, values, np.nan), mask)
        graph = knn_graph(filled, k=2)
        state = init_model_state(3, TrainConfig(seed=5, hidden_dim=6))
        m = mask.astype(bool)
        loss, _, (xt1, x1, xt2, x2) = loss_and_gradients(filled, m, graph, state)
        assert abs(loss - mpin_loss(filled, m, xt1, xt2)) < 1e-12
        fxt1, fx1, fxt2, fx2 = mpin_forward(filled, m, graph, state)
        np.testing.assert_array_equal(xt1, fxt1)
        np.testing.assert_array_equal(x2, fx2)

    def test_empty_training_mask_undefined(self):
        graph = SimilarityGraph.from_weight_matrix(np.zeros((2, 2)))
        state = init_model_state(2, TrainConfig(seed=0, hidden_dim=3))
        with pytest.raises(UndefinedMetricError):
            loss_and_gradients(
                np.zeros((2, 2)), np.zeros((2, 2), dtype=bool), graph, state
            )


class TestAdam:
    def test_first_step_closed_form(self):
        p = np.array([[1.0, -2.0]])
        opt = AdamOptimizer([("p", p)], learning_rate=0.1)
        g = np.array([[0.5, -0.25]])
        opt.step({"p": g})
        # after one step the update is lr * g / (|g| + eps)
        expected = np.array([[1.0, -2.0]]) - 0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p, expected, atol=1e-12)
        assert opt.step_count == 1

    def test_two_steps_match_reference_recurrence(self):
        rng = np.random.default_rng(55)
        p = rng.normal(size=(3, 2))
        p_ref = p.copy()
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        opt = AdamOptimizer([("p", p)], learning_rate=0.05)
        for t in (1, 2):
            g = rng.normal(size=(3, 2))
            opt.step({"p": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1.0 - 0.9**t)
            v_hat = v / (1.0 - 0.999**t)
            p_ref -= 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(p, p_ref, atol=1e-12)

    def test_decay_shrinks_matrices_only(self):
        w = np.full((2, 2), 10.0)
        b = np.full(2, 10.0)
        opt = AdamOptimizer(
            [("w", w), ("b", b)], learning_rate=0.1, weight_decay=0.5
        )
        opt.step({"w": np.zeros((2, 2)), "b": np.zeros(2)})
        np.testing.assert_allclose(w, np.full((2, 2), 10.0 * (1.0 - 0.1 * 0.5)))
        np.testing.assert_allclose(b, np.full(2, 10.0))


class TestConfigAndInit:
    def test_defaults(self):
        config = TrainConfig()
        assert config.epochs == 200
        assert config.learning_rate == 0.01
        assert config.weight_decay == 0.1
        assert config.lambda1 == 1.0
        assert config.lambda2 == 1.0
        assert config.validation_ratio == 0.05
        assert config.early_stop_patience == 30

    def test_hidden_dim_resolution(self):
        assert TrainConfig().resolve_hidden_dim(3) == 32
        assert TrainConfig().resolve_hidden_dim(20) == 40
        assert TrainConfig(hidden_dim=12).resolve_hidden_dim(5) == 12

    def test_hidden_dim_must_exceed_data_dim(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(hidden_dim=4).resolve_hidden_dim(4)

    def test_invalid_fields(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(validation_ratio=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(validation_ratio=1.0)

    def test_glorot_bounds_and_zero_biases(self):
        state = init_model_state(4, TrainConfig(seed=3))
        for layer in (state.layer1, state.layer2):
            for w, fan_in, fan_out in (
                (layer.w_self, 4, 32),
                (layer.w_neigh, 4, 32),
                (layer.w_rec, 32, 4),
            ):
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                assert np.abs(w).max() <= limit
                assert w.shape == (fan_in, fan_out)
            assert (layer.b_msg == 0.0).all()
            assert (layer.b_rec == 0.0).all()

    def test_seeded_init_reproducible(self):
        a = init_model_state(3, TrainConfig(seed=11))
        b = init_model_state(3, TrainConfig(seed=11))
        c = init_model_state(3, TrainConfig(seed=12))
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert any(
            not np.array_equal(pa, pc)
            for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
        )

    def test_state_copy_is_deep(self):
        state = init_model_state(3, TrainConfig(seed=2))
        clone = state.copy()
        clone.layer1.w_self[0, 0] += 1.0
        assert state.layer1.w_self[0, 0] != clone.layer1.w_self[0, 0]


class TestSplitValidation:
    def test_count_is_floor_of_ratio(self):
        mask = np.ones((10, 10), dtype=bool)
        rows, cols = split_validation(mask, 0.05, np.random.default_rng(1))
        assert len(rows) == 5

    def test_picked_positions_are_observed(self):
        rng = np.random.default_rng(2)
        mask = rng.random((12, 6)) > 0.4
        rows, cols = split_validation(mask, 0.2, np.random.default_rng(3))
        assert mask[rows, cols].all()
        assert len(rows) == int(0.2 * mask.sum())

    def test_empty_split_rejected(self):
        mask = np.ones((2, 2), dtype=bool)
        with pytest.raises(ConfigurationError):
            split_validation(mask, 0.05, np.random.default_rng(4))

    def test_deterministic_under_seed(self):
        mask = np.ones((8, 8), dtype=bool)
        a = split_validation(mask, 0.1, np.random.default_rng(9))
        b = split_validation(mask, 0.1, np.random.default_rng(9))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestTraining:
    def small_config(self, **overrides):
        base = dict(epochs=30, seed=5, validation_ratio=0.1, hidden_dim=10)
        base.update(overrides)
        return TrainConfig(**base)

    def test_deterministic_repeat(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(61), 20, 4)
        builder = make_knn_builder(k=5)
        a = train_impute(chunk, builder, self.small_config())
        b = train_impute(chunk, builder, self.small_config())
        np.testing.assert_array_equal(a.completed, b.completed)
        assert a.val_mae_trace == b.val_mae_trace
        for (_, pa), (_, pb) in zip(
            a.state.named_parameters(), b.state.named_parameters()
        ):
            np.testing.assert_array_equal(pa, pb)

    def test_observed_entries_bit_exact(self, make_chunk):
        rng = np.random.default_rng(63)
        for trial in range(5):
            chunk = make_chunk(rng, int(rng.integers(10, 30)), int(rng.integers(3, 7)))
            result = train_impute(
                chunk, make_knn_builder(k=4), self.small_config(seed=trial)
            )
            values = chunk.values_matrix()
            obs = chunk.mask().bits.astype(bool)
            assert np.array_equal(result.completed[obs], values[obs])
            assert np.isfinite(result.completed).all()

    def test_trace_and_best_agree(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(65), 24, 4)
        result = train_impute(chunk, make_knn_builder(k=5), self.small_config())
        assert result.best_val_mae == min(result.val_mae_trace)
        assert result.val_mae_trace.index(result.best_val_mae) + 1 == result.best_epoch
        assert result.epochs_run == len(result.val_mae_trace)

    def test_early_stop_bounds_epochs(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(67), 24, 4)
        result = train_impute(
            chunk,
            make_knn_builder(k=5),
            self.small_config(epochs=200, early_stop_patience=3),
        )
        assert result.epochs_run <= 200
        if result.epochs_run < 200:
            assert result.epochs_run == result.best_epoch + 3

    def test_no_patience_runs_every_epoch(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(69), 16, 3)
        result = train_impute(
            chunk,
            make_knn_builder(k=4),
            self.small_config(epochs=25, early_stop_patience=None),
        )
        assert result.epochs_run == 25

    def test_warm_start_state_accepted(self, make_chunk):
        rng = np.random.default_rng(71)
        first = train_impute(
            make_chunk(rng, 18, 4), make_knn_builder(k=4), self.small_config()
        )
        second_chunk = make_chunk(rng, 18, 4)
        warm = train_impute(
            second_chunk,
            make_knn_builder(k=4),
            self.small_config(),
            init_state=first.state,
        )
        again = train_impute(
            second_chunk,
            make_knn_builder(k=4),
            self.small_config(),
            init_state=first.state,
        )
        np.testing.assert_array_equal(warm.completed, again.completed)

    def test_tiny_chunk_validation_error(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(73), 2, 2, missing_rate=0.0)
        with pytest.raises(ConfigurationError):
            train_impute(
                chunk, make_knn_builder(k=1), TrainConfig(validation_ratio=0.05)
            )

    def test_divergence_reports_epoch(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(75), 16, 3)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError) as err:
                train_impute(
                    chunk,
                    make_knn_builder(k=4),
                    self.small_config(learning_rate=1e200, epochs=50),
                )
        assert err.value.epoch >= 2

    def test_default_hidden_dim_applied(self, make_chunk):
        chunk = make_chunk(np.random.default_rng(77), 20, 4)
        result = train_impute(
            chunk, make_knn_builder(k=4), TrainConfig(epochs=5, validation_ratio=0.1)
        )
        assert result.state.layer1.hidden_dim == 32
