"""
Synthetic interaction streams with controllable concept drift and catalog churn
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, StrictInt, ValidationError, field_validator
from scipy.special import expit

from config import (
    DEFAULT_CHURN_RATE,
    DEFAULT_CONTEXT_DIM,
    DEFAULT_DAYS,
    DEFAULT_DRIFT_RATE,
    DEFAULT_EVENTS_PER_DAY,
    DEFAULT_ITEMS,
    DEFAULT_LABEL_BIAS,
    DEFAULT_LATENT_DIM,
    DEFAULT_USERS,
    SECONDS_PER_DAY,
    STREAM_START_TS,
)
from .exceptions import DataError
from .utils import ValidatedConfig, atomic_write_bytes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    """One timestamped interaction"""

    timestamp: int
    user_id: str
    item_id: str
    context: Tuple[float, ...]
    label: int

    def to_record(self) -> Dict[str, Any]:
        return {
            'ts': self.timestamp,
            'user': self.user_id,
            'item': self.item_id,
            'ctx': list(self.context),
            'label': self.label,
        }


class EventRecord(BaseModel):
    """Schema of one line of the event log"""

    model_config = ConfigDict(extra='forbid')

    ts: StrictInt
    user: str = Field(min_length=1)
    item: str = Field(min_length=1)
    ctx: List[float]
    label: StrictInt

    @field_validator('ctx')
    @classmethod
    def _finite_context(cls, value: List[float]) -> List[float]:
        if not all(math.isfinite(x) for x in value):
            raise ValueError("context values must be finite")
        return value

    @field_validator('label')
    @classmethod
    def _binary_label(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {value}")
        return value

    def to_event(self) -> Event:
        return Event(self.ts, self.user, self.item, tuple(float(x) for x in self.ctx), self.label)


class DriftGenConfig(ValidatedConfig):
    """Parameters of the ground-truth generating process"""

    seed: int = Field(default=0, ge=0)
    num_users: int = Field(default=DEFAULT_USERS, ge=1)
    num_items_initial: int = Field(default=DEFAULT_ITEMS, ge=1)
    latent_dim: int = Field(default=DEFAULT_LATENT_DIM, ge=1)
    days: int = Field(default=DEFAULT_DAYS, ge=1)
    events_per_day: int = Field(default=DEFAULT_EVENTS_PER_DAY, ge=1)
    drift_rate: float = Field(default=DEFAULT_DRIFT_RATE, ge=0, allow_inf_nan=False)
    churn_rate: float = Field(default=DEFAULT_CHURN_RATE, ge=0, le=1)
    context_dim: int = Field(default=DEFAULT_CONTEXT_DIM, ge=0)
    label_bias: float = Field(default=DEFAULT_LABEL_BIAS, allow_inf_nan=False)


class DriftStreamGenerator:
    """Generates an event stream from drifting user/item latent factors.

    Every user and item has a latent vector with per-coordinate variance
    1/sqrt(k), so the ground-truth logit has unit variance at day 1. At each
    day boundary all latents take a Gaussian random-walk step and a
    churn_rate fraction of catalog slots is handed to brand-new item ids.
    """

    def __init__(self, config: DriftGenConfig, record_latents: bool = False):
        self.config = config
        self.record_latents = record_latents
        self.latent_history: List[Dict[str, Any]] = []
        self.true_probabilities: Optional[np.ndarray] = None

    def _churn_count(self) -> int:
        if self.config.churn_rate == 0:
            return 0
        return max(1, int(round(self.config.churn_rate * self.config.num_items_initial)))

    def generate(self) -> List[Event]:
        """Generate the full stream; identical configs give identical streams"""
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        scale = cfg.latent_dim ** -0.25

        users = rng.normal(0.0, scale, size=(cfg.num_users, cfg.latent_dim))
        items = rng.normal(0.0, scale, size=(cfg.num_items_initial, cfg.latent_dim))
        item_ids = [f"item-{j}" for j in range(cfg.num_items_initial)]
        next_item = cfg.num_items_initial
        churn = self._churn_count()

        events: List[Event] = []
        probabilities: List[np.ndarray] = []
        self.latent_history = []

        for day in range(cfg.days):
            if day > 0:
                if cfg.drift_rate > 0:
                    users = users + rng.normal(0.0, cfg.drift_rate, size=users.shape)
                    items = items + rng.normal(0.0, cfg.drift_rate, size=items.shape)
                if churn:
                    retired = np.sort(rng.choice(cfg.num_items_initial, size=churn, replace=False))
                    for slot in retired:
                        item_ids[slot] = f"item-{next_item}"
                        next_item += 1
                    items[retired] = rng.normal(0.0, scale, size=(churn, cfg.latent_dim))

            if self.record_latents:
                self.latent_history.append({
                    'users': users.copy(),
                    'items': {item_id: items[j].copy() for j, item_id in enumerate(item_ids)},
                })

            n = cfg.events_per_day
            u = rng.integers(0, cfg.num_users, size=n)
            i = rng.integers(0, cfg.num_items_initial, size=n)
            context = rng.standard_normal(size=(n, cfg.context_dim))
            prob = expit(np.einsum('nk,nk->n', users[u], items[i]) + cfg.label_bias)
            labels = rng.random(n) < prob
            offsets = np.sort(rng.integers(0, SECONDS_PER_DAY, size=n))
            day_start = STREAM_START_TS + day * SECONDS_PER_DAY

            probabilities.append(prob)
            for k in range(n):
                events.append(Event(
                    timestamp=int(day_start + offsets[k]),
                    user_id=f"user-{int(u[k])}",
                    item_id=item_ids[int(i[k])],
                    context=tuple(float(x) for x in context[k]),
                    label=int(labels[k]),
                ))

        self.true_probabilities = np.concatenate(probabilities)
        logger.info(
            f"Generated {len(events)} events over {cfg.days} days "
            f"(drift_rate={cfg.drift_rate}, churn_rate={cfg.churn_rate}, items minted={next_item})"
        )
        return events


def generate(config: DriftGenConfig) -> List[Event]:
    """Generate the event stream described by config"""
    return DriftStreamGenerator(config).generate()


def write_events(events: Sequence[Event], path: str) -> None:
    """Write events as newline-delimited JSON (atomic)"""
    lines = [json.dumps(e.to_record(), separators=(',', ':')) for e in events]
    payload = "".join(line + "\n" for line in lines)
    atomic_write_bytes(path, payload.encode('utf-8'))
    logger.info(f"Wrote {len(lines)} events to {path}")


def iter_events(path: str) -> Iterator[Event]:
    """Stream events from a log file, validating schema and timestamp order"""
    previous_ts: Optional[int] = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                event = EventRecord.model_validate(json.loads(line)).to_event()
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON: {e.msg}", line_number=line_number) from e
            except ValidationError as e:
                raise DataError(f"schema violation: {e}", line_number=line_number) from e
            if previous_ts is not None and event.timestamp < previous_ts:
                raise DataError(
                    f"timestamp {event.timestamp} precedes {previous_ts}", line_number=line_number
                )
            previous_ts = event.timestamp
            yield event


def read_events(path: str) -> List[Event]:
    """Read a whole event log into memory"""
    events = list(iter_events(path))
    logger.info(f"Read {len(events)} events from {path}")
    return events


def day_of(timestamp: int, origin_ts: int) -> int:
    """0-based day index of timestamp relative to the day containing origin_ts"""
    return timestamp // SECONDS_PER_DAY - origin_ts // SECONDS_PER_DAY


def group_by_day(events: Sequence[Event], origin_ts: Optional[int] = None) -> List[List[Event]]:
    """Split an ordered stream into consecutive day buckets (empty days kept)"""
    if not events:
        return []
    origin = events[0].timestamp if origin_ts is None else origin_ts
    days: List[List[Event]] = []
    previous = None
    for event in events:
        if previous is not None and event.timestamp < previous:
            raise DataError(f"stream is not timestamp-ordered at ts={event.timestamp}")
        previous = event.timestamp
        index = day_of(event.timestamp, origin)
        if index < 0:
            raise DataError(f"event at ts={event.timestamp} precedes the stream origin")
        while len(days) <= index:
            days.append([])
        days[index].append(event)
    return days
