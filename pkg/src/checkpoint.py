"""
Bit-exact checkpoint files for ModelState

Layout (all little-endian): a fixed header (see HEADER_FORMAT) followed by
the payload: bias, context weights, then every user table and every item
table row-major, all as float32. The header's CRC-32 covers the payload.
"""

import logging
import os
import struct
import tempfile
import zlib
from typing import Optional, Sequence

import numpy as np

from .datagen import Event, group_by_day
from .exceptions import (
    BadMagicError,
    CheckpointError,
    ChecksumMismatchError,
    ConfigurationError,
    IntegrityError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .hashing import HashConfig, HashMode
from .model import PARAM_DTYPE, ModelConfig, ModelState, parameter_count
from .policies import PolicyKind, RetrainPolicy, run_policy
from .utils import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"ODLC"
FORMAT_VERSION = 1

# magic, version, embedding_dim, context_dim,
# user: buckets, mode, seed_a, seed_b
# item: buckets, mode, seed_a, seed_b
# learning_rate, l2_reg, init_scale, step_count, model seed, payload crc32
HEADER_FORMAT = "<4sHII QBQQ QBQQ dddQQI"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)

FLOAT_LE = np.dtype("<f4")
_MODE_CODES = {HashMode.SINGLE: 0, HashMode.DOUBLE: 1}
_CODE_MODES = {code: mode for mode, code in _MODE_CODES.items()}


def _hash_fields(cfg: HashConfig):
    return cfg.buckets, _MODE_CODES[cfg.mode], cfg.seed_a, cfg.seed_b


def _payload(state: ModelState) -> bytes:
    chunks = []
    for array in state.arrays():
        if not np.all(np.isfinite(array)):
            raise IntegrityError("refusing to checkpoint a non-finite parameter")
        chunks.append(np.ascontiguousarray(array, dtype=PARAM_DTYPE).astype(FLOAT_LE).tobytes())
    return b"".join(chunks)


def encode(state: ModelState) -> bytes:
    """Serialize a state to checkpoint bytes"""
    config = state.config
    payload = _payload(state)
    header = struct.pack(
        HEADER_FORMAT,
        MAGIC,
        FORMAT_VERSION,
        config.embedding_dim,
        config.context_dim,
        *_hash_fields(config.hash_config_user),
        *_hash_fields(config.hash_config_item),
        config.learning_rate,
        config.l2_reg,
        config.init_scale,
        state.step_count,
        config.seed,
        zlib.crc32(payload) & 0xFFFFFFFF,
    )
    return header + payload


def decode(data: bytes) -> ModelState:
    """Parse checkpoint bytes, validating magic, version, length and checksum"""
    if len(data) < 6:
        raise TruncatedCheckpointError(f"file holds {len(data)} bytes, shorter than the header")
    magic, version = struct.unpack_from("<4sH", data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} is not supported (expected {FORMAT_VERSION})")
    if len(data) < HEADER_SIZE:
        raise TruncatedCheckpointError(f"header truncated at {len(data)} of {HEADER_SIZE} bytes")

    (_, _, dim, context_dim,
     u_buckets, u_mode, u_seed_a, u_seed_b,
     i_buckets, i_mode, i_seed_a, i_seed_b,
     learning_rate, l2_reg, init_scale, step_count, seed, crc) = struct.unpack_from(HEADER_FORMAT, data)

    try:
        config = ModelConfig(
            embedding_dim=dim,
            learning_rate=learning_rate,
            l2_reg=l2_reg,
            context_dim=context_dim,
            hash_config_user=HashConfig(buckets=u_buckets, mode=_CODE_MODES[u_mode], seed_a=u_seed_a, seed_b=u_seed_b),
            hash_config_item=HashConfig(buckets=i_buckets, mode=_CODE_MODES[i_mode], seed_a=i_seed_a, seed_b=i_seed_b),
            init_scale=init_scale,
            seed=seed,
        )
    except (KeyError, ConfigurationError) as e:
        raise CheckpointError(f"header describes an invalid model: {e}") from e

    expected = 4 * parameter_count(config)
    payload = data[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedCheckpointError(f"payload holds {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise CheckpointError(f"payload holds {len(payload) - expected} bytes beyond the declared dimensions")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumMismatchError("payload checksum does not match header")

    values = np.frombuffer(payload, dtype=FLOAT_LE).astype(PARAM_DTYPE)
    offset = 0

    def take(count: int) -> np.ndarray:
        nonlocal offset
        chunk = values[offset:offset + count]
        offset += count
        return chunk.copy()

    bias = float(take(1)[0])
    weights = take(context_dim)
    user_cfg, item_cfg = config.hash_config_user, config.hash_config_item
    user_tables = [take(user_cfg.buckets * dim).reshape(user_cfg.buckets, dim) for _ in range(user_cfg.num_tables)]
    item_tables = [take(item_cfg.buckets * dim).reshape(item_cfg.buckets, dim) for _ in range(item_cfg.num_tables)]

    return ModelState(
        config=config,
        bias=bias,
        context_weights=weights,
        user_tables=user_tables,
        item_tables=item_tables,
        step_count=step_count,
    )


def save(state: ModelState, path: str) -> None:
    """Write a checkpoint atomically (temp file + rename)"""
    data = encode(state)
    atomic_write_bytes(path, data)
    logger.info(f"Saved checkpoint {path} ({len(data)} bytes, step {state.step_count})")


def load(path: str) -> ModelState:
    """Read and validate a checkpoint"""
    with open(path, 'rb') as f:
        data = f.read()
    state = decode(data)
    logger.info(f"Loaded checkpoint {path} (step {state.step_count})")
    return state


def expected_file_size(config: ModelConfig) -> int:
    return HEADER_SIZE + 4 * parameter_count(config)


def resume_equivalence_check(config: ModelConfig, stream: Sequence[Event], split_day: int,
                             resume_config: Optional[ModelConfig] = None) -> bool:
    """True iff training straight through equals train / save / load / continue.

    Both pipelines run daily stateful sessions. The interrupted pipeline
    starts from resume_config when given (e.g. other hash seeds).
    """
    days = group_by_day(list(stream))
    if not 1 <= split_day < len(days):
        raise ConfigurationError(f"split_day must be in [1, {len(days) - 1}], got {split_day}")

    policy = RetrainPolicy(kind=PolicyKind.STATEFUL_INCREMENTAL, cadence_days=1)
    head = [e for d in days[:split_day] for e in d]
    tail = [e for d in days[split_day:] for e in d]

    straight, _ = run_policy(policy, config, list(stream))

    first, _ = run_policy(policy, resume_config or config, head)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "resume.ckpt")
        save(first, path)
        restored = load(path)
    resumed, _ = run_policy(policy, restored.config, tail, initial_state=restored)

    return straight.bitwise_equal(resumed)
