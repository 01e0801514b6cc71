"""
Factorized logistic scorer over hashed user/item embeddings

score = b + <e_u, e_i> + <w, context>, trained one example at a time with
constant-rate SGD on the L2-regularized log loss. Parameters are stored as
float32; all arithmetic happens in float64 and is rounded on write-back.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import Field
from scipy.special import expit

from config import (
    DEFAULT_BUCKETS,
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_INIT_SCALE,
    DEFAULT_L2_REG,
    DEFAULT_LEARNING_RATE,
    DEFAULT_SEED,
    LOSS_CLAMP,
)
from .datagen import Event
from .exceptions import DataError, DimensionError, NumericDivergenceError
from .hashing import SEED_LIMIT, HashConfig, hash_id
from .utils import ValidatedConfig

logger = logging.getLogger(__name__)

PARAM_DTYPE = np.float32


class ModelConfig(ValidatedConfig):
    """Hyper-parameters and hashing layout of the scorer"""

    embedding_dim: int = Field(default=DEFAULT_EMBEDDING_DIM, ge=1)
    learning_rate: float = Field(default=DEFAULT_LEARNING_RATE, gt=0, allow_inf_nan=False)
    l2_reg: float = Field(default=DEFAULT_L2_REG, ge=0, allow_inf_nan=False)
    context_dim: int = Field(default=0, ge=0)
    hash_config_user: HashConfig = Field(default_factory=lambda: HashConfig(buckets=DEFAULT_BUCKETS))
    hash_config_item: HashConfig = Field(default_factory=lambda: HashConfig(buckets=DEFAULT_BUCKETS))
    init_scale: float = Field(default=DEFAULT_INIT_SCALE, ge=0, allow_inf_nan=False)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=SEED_LIMIT)


@dataclass(eq=False)
class ModelState:
    """All learnable parameters plus the SGD step counter"""

    config: ModelConfig
    bias: float
    context_weights: np.ndarray
    user_tables: List[np.ndarray]
    item_tables: List[np.ndarray]
    step_count: int = 0

    def copy(self) -> "ModelState":
        return ModelState(
            config=self.config,
            bias=self.bias,
            context_weights=self.context_weights.copy(),
            user_tables=[t.copy() for t in self.user_tables],
            item_tables=[t.copy() for t in self.item_tables],
            step_count=self.step_count,
        )

    def arrays(self) -> List[np.ndarray]:
        """Every parameter array in serialization order"""
        return [
            np.array([self.bias], dtype=PARAM_DTYPE),
            self.context_weights,
            *self.user_tables,
            *self.item_tables,
        ]

    def bitwise_equal(self, other: "ModelState") -> bool:
        if self.config != other.config or self.step_count != other.step_count:
            return False
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(mine, theirs)
        )


@dataclass(frozen=True)
class Prediction:
    score: float
    probability: float


@dataclass
class Gradients:
    """Gradients of the regularized loss for one example, float64"""

    loss: float
    probability: float
    bias: float
    context_weights: np.ndarray
    user_rows: List[np.ndarray] = field(default_factory=list)
    item_rows: List[np.ndarray] = field(default_factory=list)


def init_model(config: ModelConfig) -> ModelState:
    """Fresh state: zero bias/weights, embeddings uniform in [-init_scale, init_scale]"""
    rng = np.random.default_rng(config.seed)
    d = config.embedding_dim

    def table(buckets: int) -> np.ndarray:
        if config.init_scale == 0:
            return np.zeros((buckets, d), dtype=PARAM_DTYPE)
        return rng.uniform(-config.init_scale, config.init_scale, size=(buckets, d)).astype(PARAM_DTYPE)

    user_cfg, item_cfg = config.hash_config_user, config.hash_config_item
    user_tables = [table(user_cfg.buckets) for _ in range(user_cfg.num_tables)]
    item_tables = [table(item_cfg.buckets) for _ in range(item_cfg.num_tables)]

    return ModelState(
        config=config,
        bias=0.0,
        context_weights=np.zeros(config.context_dim, dtype=PARAM_DTYPE),
        user_tables=user_tables,
        item_tables=item_tables,
        step_count=0,
    )


def _context_vector(config: ModelConfig, context: Sequence[float]) -> np.ndarray:
    vector = np.asarray(context, dtype=np.float64).reshape(-1)
    if vector.shape[0] != config.context_dim:
        raise DimensionError(f"context has length {vector.shape[0]}, expected {config.context_dim}")
    return vector


def _lookup(tables: List[np.ndarray], rows: Tuple[int, ...]) -> List[np.ndarray]:
    return [tables[k][row].astype(np.float64) for k, row in enumerate(rows)]


def log_loss(probability: float, label: int) -> float:
    """Per-example log loss with p clamped to [1e-7, 1 - 1e-7]"""
    p = min(max(probability, LOSS_CLAMP), 1.0 - LOSS_CLAMP)
    return float(-np.log(p)) if label == 1 else float(-np.log1p(-p))


def loss_and_gradients(bias: float, context_weights: np.ndarray, user_rows: List[np.ndarray],
                       item_rows: List[np.ndarray], context: np.ndarray, label: int,
                       l2_reg: float) -> Gradients:
    """Regularized loss and its analytic gradients at float64 parameters.

    Objective: softplus(s) - y*s + l2/2 * (|w|^2 + |e_u|^2 + |e_i|^2) with
    e_u, e_i the sums of the participating rows; the bias is unregularized.
    """
    e_u = np.sum(user_rows, axis=0)
    e_i = np.sum(item_rows, axis=0)
    score = bias + float(e_u @ e_i) + float(context_weights @ context)
    p = float(expit(score))
    g = p - label

    loss = float(np.logaddexp(0.0, score) - label * score)
    loss += 0.5 * l2_reg * float(context_weights @ context_weights + e_u @ e_u + e_i @ e_i)

    grad_u = g * e_i + l2_reg * e_u
    grad_i = g * e_u + l2_reg * e_i
    return Gradients(
        loss=loss,
        probability=p,
        bias=g,
        context_weights=g * context + l2_reg * context_weights,
        user_rows=[grad_u for _ in user_rows],
        item_rows=[grad_i for _ in item_rows],
    )


def predict(state: ModelState, user_id: str, item_id: str, context: Sequence[float]) -> Prediction:
    """Score one (user, item, context); does not modify state"""
    config = state.config
    ctx = _context_vector(config, context)
    user_rows = _lookup(state.user_tables, hash_id(config.hash_config_user, user_id).rows)
    item_rows = _lookup(state.item_tables, hash_id(config.hash_config_item, item_id).rows)

    score = (
        float(state.bias)
        + float(np.sum(user_rows, axis=0) @ np.sum(item_rows, axis=0))
        + float(state.context_weights.astype(np.float64) @ ctx)
    )
    return Prediction(score=score, probability=float(expit(score)))


def sgd_step(state: ModelState, event: Event) -> float:
    """Apply one SGD update in place and return the example's log loss"""
    if event.label not in (0, 1) or isinstance(event.label, bool):
        raise DataError(f"label must be 0 or 1, got {event.label!r}")

    config = state.config
    eta, l2 = config.learning_rate, config.l2_reg
    ctx = _context_vector(config, event.context)
    user_idx = hash_id(config.hash_config_user, event.user_id).rows
    item_idx = hash_id(config.hash_config_item, event.item_id).rows
    user_rows = _lookup(state.user_tables, user_idx)
    item_rows = _lookup(state.item_tables, item_idx)
    weights = state.context_weights.astype(np.float64)

    grads = loss_and_gradients(float(state.bias), weights, user_rows, item_rows, ctx, event.label, l2)
    # rounded to storage precision before the finiteness check
    new_bias = PARAM_DTYPE(float(state.bias) - eta * grads.bias)
    new_weights = (weights - eta * grads.context_weights).astype(PARAM_DTYPE)
    new_user = [(row - eta * g).astype(PARAM_DTYPE) for row, g in zip(user_rows, grads.user_rows)]
    new_item = [(row - eta * g).astype(PARAM_DTYPE) for row, g in zip(item_rows, grads.item_rows)]

    if not (np.isfinite(new_bias) and np.all(np.isfinite(new_weights))
            and all(np.all(np.isfinite(r)) for r in new_user + new_item)):
        logger.error(f"Non-finite parameter after step {state.step_count + 1}")
        raise NumericDivergenceError(
            f"parameters diverged at step {state.step_count + 1} (learning_rate={eta})"
        )

    state.bias = float(new_bias)
    state.context_weights = new_weights
    for table, row, value in zip(state.user_tables, user_idx, new_user):
        table[row] = value
    for table, row, value in zip(state.item_tables, item_idx, new_item):
        table[row] = value
    state.step_count += 1

    return log_loss(grads.probability, event.label)


def parameter_count(config: ModelConfig) -> int:
    """Number of float32 parameters in a state built from config"""
    d = config.embedding_dim
    user_cfg, item_cfg = config.hash_config_user, config.hash_config_item
    return 1 + config.context_dim + d * (
        user_cfg.num_tables * user_cfg.buckets + item_cfg.num_tables * item_cfg.buckets
    )

