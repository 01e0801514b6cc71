"""
Tests for the factorized logistic scorer
"""

import math
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.datagen import Event
from src.exceptions import ConfigurationError, DataError, DimensionError, NumericDivergenceError
from src.hashing import HashConfig, HashMode
from src.model import (
    ModelConfig,
    init_model,
    loss_and_gradients,
    parameter_count,
    predict,
    sgd_step,
)


def tiny_config(**overrides) -> ModelConfig:
    """d=1, one bucket per table, no context"""
    fields = dict(
        embedding_dim=1,
        learning_rate=0.1,
        l2_reg=0.0,
        context_dim=0,
        hash_config_user=HashConfig(buckets=1),
        hash_config_item=HashConfig(buckets=1),
        init_scale=0.0,
        seed=0,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def event(label=1, user="user-1", item="item-1", context=()):
    return Event(timestamp=0, user_id=user, item_id=item, context=tuple(context), label=label)


class TestInitModel:
    """Test parameter initialization"""

    def test_zero_init_scale(self):
        """init_scale=0 gives an all-zero state"""
        state = init_model(tiny_config(embedding_dim=4, context_dim=3))
        for array in state.arrays():
            assert not np.any(array)

    def test_same_seed_is_bit_identical(self):
        """Same config and seed give the same bytes"""
        config = ModelConfig(init_scale=0.05, seed=11, hash_config_user=HashConfig(buckets=32),
                             hash_config_item=HashConfig(buckets=32))
        assert init_model(config).bitwise_equal(init_model(config))

    def test_different_seeds_differ(self):
        """seed=1 vs seed=2 differ in at least one embedding entry"""
        config = ModelConfig(init_scale=0.05, seed=1, hash_config_user=HashConfig(buckets=32),
                             hash_config_item=HashConfig(buckets=32))
        a = init_model(config)
        b = init_model(config.replace(seed=2))
        assert not np.array_equal(a.user_tables[0], b.user_tables[0])

    def test_double_mode_allocates_two_tables(self):
        """Double hashing doubles the table count"""
        config = ModelConfig(
            embedding_dim=2,
            hash_config_user=HashConfig(buckets=8, mode=HashMode.DOUBLE, seed_a=1, seed_b=2),
            hash_config_item=HashConfig(buckets=4),
        )
        state = init_model(config)
        assert len(state.user_tables) == 2
        assert len(state.item_tables) == 1
        assert parameter_count(config) == 1 + 2 * (2 * 8 + 4)

    @pytest.mark.parametrize("field,value", [
        ("embedding_dim", 0),
        ("learning_rate", 0.0),
        ("learning_rate", -0.1),
        ("l2_reg", -1.0),
    ])
    def test_invalid_config(self, field, value):
        """Non-positive dim or rate is a configuration error"""
        with pytest.raises(ConfigurationError):
            tiny_config(**{field: value})


class TestPredict:
    """Test scoring"""

    def test_zero_state(self):
        """All-zero state scores 0 with probability 0.5"""
        state = init_model(tiny_config(embedding_dim=3, context_dim=2))
        prediction = predict(state, "u", "i", [1.5, -2.0])
        assert prediction.score == 0.0
        assert prediction.probability == 0.5

    def test_unit_embeddings(self):
        """e_u=[1,0], e_i=[1,0] scores sigma(1)"""
        state = init_model(tiny_config(embedding_dim=2))
        state.user_tables[0][0] = [1.0, 0.0]
        state.item_tables[0][0] = [1.0, 0.0]
        prediction = predict(state, "u", "i", [])
        assert prediction.score == pytest.approx(1.0)
        assert prediction.probability == pytest.approx(0.73106, abs=1e-5)

    def test_symmetric_in_user_and_item(self):
        """Swapping user and item embedding contents leaves the score unchanged"""
        state = init_model(tiny_config(embedding_dim=3))
        state.user_tables[0][0] = [0.3, -0.2, 0.7]
        state.item_tables[0][0] = [1.1, 0.4, -0.5]
        before = predict(state, "u", "i", []).score

        state.user_tables[0][0], state.item_tables[0][0] = (
            state.item_tables[0][0].copy(), state.user_tables[0][0].copy()
        )
        assert predict(state, "u", "i", []).score == before

    def test_predict_does_not_mutate(self):
        """predict leaves the state untouched"""
        config = ModelConfig(init_scale=0.1, hash_config_user=HashConfig(buckets=16),
                             hash_config_item=HashConfig(buckets=16))
        state = init_model(config)
        snapshot = state.copy()
        predict(state, "user-3", "item-9", [])
        assert state.bitwise_equal(snapshot)

    def test_context_length_mismatch(self):
        """Wrong context length raises a dimension error"""
        state = init_model(tiny_config(context_dim=2))
        with pytest.raises(DimensionError):
            predict(state, "u", "i", [1.0])


class TestSgdStep:
    """Test the single-example update"""

    def test_zero_embedding_fixed_point(self):
        """From zero, only the bias moves"""
        state = init_model(tiny_config(embedding_dim=4))
        sgd_step(state, event(label=1))
        assert state.bias == pytest.approx(0.05)
        assert not np.any(state.user_tables[0])
        assert not np.any(state.item_tables[0])
        assert state.step_count == 1

    def test_hand_computed_update(self):
        """d=1 update matches hand arithmetic"""
        state = init_model(tiny_config())
        state.user_tables[0][0] = [0.5]
        state.item_tables[0][0] = [0.4]
        loss = sgd_step(state, event(label=1))

        p = 1.0 / (1.0 + math.exp(-0.2))
        assert p == pytest.approx(0.54983, abs=1e-5)
        assert loss == pytest.approx(-math.log(p), abs=1e-7)
        assert state.user_tables[0][0, 0] == pytest.approx(0.518007, abs=1e-5)
        assert state.item_tables[0][0, 0] == pytest.approx(0.422509, abs=1e-5)
        assert state.bias == pytest.approx(0.045017, abs=1e-5)

    def test_parameters_stay_float32(self):
        """Storage precision is preserved across updates"""
        config = ModelConfig(context_dim=2, hash_config_user=HashConfig(buckets=8),
                             hash_config_item=HashConfig(buckets=8))
        state = init_model(config)
        sgd_step(state, event(label=0, context=[0.5, -1.0]))
        assert state.context_weights.dtype == np.float32
        assert all(t.dtype == np.float32 for t in state.user_tables + state.item_tables)

    def test_non_binary_label(self):
        """Labels outside {0, 1} are data errors"""
        state = init_model(tiny_config())
        with pytest.raises(DataError):
            sgd_step(state, event(label=2))
        assert state.step_count == 0

    def test_divergence_is_detected(self):
        """An absurd learning rate ends in a numeric divergence error"""
        state = init_model(tiny_config(learning_rate=1e30, init_scale=1.0))
        with pytest.raises(NumericDivergenceError):
            for k in range(20):
                sgd_step(state, event(label=k % 2))

    def test_determinism(self):
        """Same config and event sequence give bit-identical states"""
        config = ModelConfig(
            embedding_dim=4, l2_reg=0.01, context_dim=1, init_scale=0.1, seed=5,
            hash_config_user=HashConfig(buckets=16, mode=HashMode.DOUBLE, seed_a=3, seed_b=4),
            hash_config_item=HashConfig(buckets=16),
        )
        events = [event(label=k % 2, user=f"user-{k % 5}", item=f"item-{k % 7}", context=[k / 10.0])
                  for k in range(200)]

        first, second = init_model(config), init_model(config)
        for e in events:
            sgd_step(first, e)
        for e in events:
            sgd_step(second, e)
        assert first.bitwise_equal(second)


class TestGradients:
    """Analytic gradients against central finite differences"""

    @staticmethod
    def _flatten(bias, weights, user_rows, item_rows):
        return np.concatenate([[bias], weights, *user_rows, *item_rows])

    @staticmethod
    def _unflatten(vector, c, d, user_tables, item_tables):
        bias = vector[0]
        weights = vector[1:1 + c]
        offset = 1 + c
        user_rows = [vector[offset + k * d: offset + (k + 1) * d] for k in range(user_tables)]
        offset += user_tables * d
        item_rows = [vector[offset + k * d: offset + (k + 1) * d] for k in range(item_tables)]
        return bias, weights, user_rows, item_rows

    def test_finite_differences(self):
        """100 random instances agree to 1e-4 relative error"""
        rng = np.random.default_rng(2024)
        eps = 1e-5
        worst = 0.0

        for _ in range(100):
            d = int(rng.integers(1, 6))
            c = int(rng.integers(0, 4))
            user_tables = int(rng.integers(1, 3))
            item_tables = int(rng.integers(1, 3))
            label = int(rng.integers(0, 2))
            l2 = float(rng.uniform(0.0, 0.1))

            bias = float(rng.normal(0.0, 0.5))
            weights = rng.normal(0.0, 0.5, size=c)
            user_rows = [rng.normal(0.0, 0.5, size=d) for _ in range(user_tables)]
            item_rows = [rng.normal(0.0, 0.5, size=d) for _ in range(item_tables)]
            context = rng.normal(0.0, 1.0, size=c)

            grads = loss_and_gradients(bias, weights, user_rows, item_rows, context, label, l2)
            analytic = self._flatten(grads.bias, grads.context_weights, grads.user_rows, grads.item_rows)

            point = self._flatten(bias, weights, user_rows, item_rows)

            def loss_at(vector):
                b, w, u, i = self._unflatten(vector, c, d, user_tables, item_tables)
                return loss_and_gradients(b, w, u, i, context, label, l2).loss

            numeric = np.zeros_like(point)
            for k in range(point.shape[0]):
                step = np.zeros_like(point)
                step[k] = eps
                numeric[k] = (loss_at(point + step) - loss_at(point - step)) / (2 * eps)

            error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
            worst = max(worst, error)

        assert worst < 1e-4
