"""
Hashed indexing of unbounded string ids into embedding rows

Ids are mapped with seeded XXH64. In double mode every id gets a row in each
of two tables; two ids only fully collide when both rows coincide.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, partial
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import xxhash
from pydantic import Field, model_validator

from .exceptions import ConfigurationError, DataError
from .utils import ValidatedConfig

logger = logging.getLogger(__name__)

SEED_LIMIT = 2 ** 64


class HashMode(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


class HashConfig(ValidatedConfig):
    """Bucket count, hashing mode and the seeds of the hash functions"""

    buckets: int = Field(ge=1)
    mode: HashMode = HashMode.SINGLE
    seed_a: int = Field(default=0, ge=0, lt=SEED_LIMIT)
    seed_b: int = Field(default=1, ge=0, lt=SEED_LIMIT)

    @model_validator(mode='after')
    def _distinct_seeds(self):
        if self.mode is HashMode.DOUBLE and self.seed_a == self.seed_b:
            raise ValueError("double hashing needs seed_a != seed_b")
        return self

    @property
    def num_tables(self) -> int:
        return 2 if self.mode is HashMode.DOUBLE else 1


@dataclass(frozen=True)
class HashedIndex:
    primary_row: int
    secondary_row: Optional[int] = None

    @property
    def rows(self) -> Tuple[int, ...]:
        if self.secondary_row is None:
            return (self.primary_row,)
        return (self.primary_row, self.secondary_row)


@dataclass(frozen=True)
class CollisionReport:
    """Empirical and analytic collision rate of one id set at one bucket count"""

    num_ids: int
    buckets: int
    mode: HashMode
    collision_rate: float
    expected_rate: float

    @property
    def memory_rows(self) -> int:
        # double hashing pays for a second table
        return self.buckets * (2 if self.mode is HashMode.DOUBLE else 1)

    @property
    def standard_error(self) -> float:
        p = self.expected_rate
        return float(np.sqrt(p * (1.0 - p) / self.num_ids))

    def to_row(self) -> Dict[str, object]:
        return {
            'buckets': self.buckets,
            'mode': self.mode.value,
            'num_ids': self.num_ids,
            'empirical_rate': self.collision_rate,
            'expected_rate': self.expected_rate,
        }


def hash64(key: str, seed: int) -> int:
    """Seeded XXH64 of the UTF-8 bytes of key"""
    return xxhash.xxh64_intdigest(key.encode('utf-8'), seed=seed)


@lru_cache(maxsize=1 << 20)
def _row(seed: int, buckets: int, key: str) -> int:
    return hash64(key, seed) % buckets


def hash_id(config: HashConfig, key: str) -> HashedIndex:
    """Map an id to its row (and second row in double mode)"""
    if not isinstance(key, str) or not key:
        raise DataError(f"id must be a non-empty string, got {key!r}")

    primary = _row(config.seed_a, config.buckets, key)
    if config.mode is HashMode.DOUBLE:
        return HashedIndex(primary, _row(config.seed_b, config.buckets, key))
    return HashedIndex(primary)


def expected_collision_rate(num_ids: int, buckets: int, mode: HashMode) -> float:
    """Probability that a given id shares its full index with another id.

    1 - (1 - 1/S)^(N - 1) where S = B for single and B^2 for double hashing.
    """
    if num_ids <= 1:
        return 0.0
    space = float(buckets) ** 2 if mode is HashMode.DOUBLE else float(buckets)
    if space <= 1.0:
        return 1.0
    return float(-np.expm1((num_ids - 1) * np.log1p(-1.0 / space)))


def _distinct_ids(ids: Iterable[str]) -> List[str]:
    id_list = list(ids)
    if not id_list:
        raise DataError("id set is empty")
    if len(set(id_list)) != len(id_list):
        raise DataError("ids must be distinct")
    for key in id_list:
        if not isinstance(key, str) or not key:
            raise DataError(f"id must be a non-empty string, got {key!r}")
    return id_list


def hash_ids(config: HashConfig, ids: Sequence[str]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Raw 64-bit hashes of every id under seed_a (and seed_b in double mode)"""
    primary = np.fromiter((hash64(k, config.seed_a) for k in ids), dtype=np.uint64, count=len(ids))
    secondary = None
    if config.mode is HashMode.DOUBLE:
        secondary = np.fromiter((hash64(k, config.seed_b) for k in ids), dtype=np.uint64, count=len(ids))
    return primary, secondary


def _shared_fraction(primary: np.ndarray, secondary: Optional[np.ndarray], buckets: int) -> float:
    rows = primary % np.uint64(buckets)
    if secondary is None:
        _, inverse, counts = np.unique(rows, return_inverse=True, return_counts=True)
    else:
        pairs = np.stack([rows, secondary % np.uint64(buckets)], axis=1)
        _, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    shared = counts[np.asarray(inverse).reshape(-1)] > 1
    return float(shared.mean())


def _report(primary: np.ndarray, secondary: Optional[np.ndarray], mode: HashMode, buckets: int) -> CollisionReport:
    num_ids = int(primary.shape[0])
    return CollisionReport(
        num_ids=num_ids,
        buckets=buckets,
        mode=mode,
        collision_rate=_shared_fraction(primary, secondary, buckets),
        expected_rate=expected_collision_rate(num_ids, buckets, mode),
    )


def measure_collisions(config: HashConfig, ids: Iterable[str]) -> CollisionReport:
    """Fraction of ids whose row (or row pair) is shared with at least one other id"""
    id_list = _distinct_ids(ids)
    primary, secondary = hash_ids(config, id_list)
    return _report(primary, secondary, config.mode, config.buckets)


def collision_sweep(config_base: HashConfig, ids: Iterable[str], bucket_list: Sequence[int],
                    workers: int = 1) -> List[CollisionReport]:
    """One CollisionReport per bucket count, in input order.

    Ids are hashed once; only the modulus changes between bucket counts.
    """
    bucket_list = [int(b) for b in bucket_list]
    if not bucket_list:
        raise ConfigurationError("bucket list is empty")
    if any(b < 1 for b in bucket_list):
        raise ConfigurationError("bucket counts must be positive")
    if any(b2 <= b1 for b1, b2 in zip(bucket_list, bucket_list[1:])):
        raise ConfigurationError(f"bucket list must be strictly increasing: {bucket_list}")

    id_list = _distinct_ids(ids)
    primary, secondary = hash_ids(config_base, id_list)
    task = partial(_report, primary, secondary, config_base.mode)

    if workers > 1 and len(bucket_list) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(bucket_list))) as executor:
            reports = list(executor.map(task, bucket_list))
    else:
        reports = [task(b) for b in bucket_list]

    for report in reports:
        logger.info(
            f"buckets={report.buckets} mode={report.mode.value} "
            f"empirical={report.collision_rate:.6f} expected={report.expected_rate:.6f}"
        )
    return reports


def synthesize_ids(num_ids: int, seed: int) -> List[str]:
    """Distinct pseudo-random ids, deterministic in (num_ids, seed)"""
    if num_ids < 1:
        raise ConfigurationError("num_ids must be positive")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, 2 ** 63, size=num_ids, dtype=np.int64)
    return [f"id-{i}-{int(t):016x}" for i, t in enumerate(tokens)]
