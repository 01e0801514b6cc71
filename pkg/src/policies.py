"""
Retraining policies and the update-count cost meter

A policy walks an ordered stream day by day. Every event is handed to the
evaluation hook before any update that uses it; training sessions run at the
end of cadence boundary days.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field

from .datagen import Event, day_of, group_by_day
from .exceptions import ConfigurationError, UndefinedRatioError
from .model import ModelConfig, ModelState, Prediction, init_model, predict, sgd_step
from .utils import ValidatedConfig, derive_seed

logger = logging.getLogger(__name__)

EvalHook = Callable[[Event, Prediction], None]
DayStartHook = Callable[[int, ModelState], None]


class PolicyKind(str, Enum):
    NONE = "none"
    STATELESS_WINDOW = "stateless_window"
    STATEFUL_INCREMENTAL = "stateful_incremental"
    FULLY_ONLINE = "fully_online"


class RetrainPolicy(ValidatedConfig):
    """Which retraining regime to run and on what schedule.

    expanding_window turns the stateless policy into batch retraining on all
    history so far (no warm-up); shuffle permutes events within a session.
    """

    kind: PolicyKind
    window_days: int = Field(default=1, ge=1)
    cadence_days: int = Field(default=1, ge=1)
    epochs_per_retrain: int = Field(default=1, ge=1)
    expanding_window: bool = False
    shuffle: bool = False

    @property
    def descriptor(self) -> str:
        if self.kind is PolicyKind.NONE:
            return "none"
        if self.kind is PolicyKind.FULLY_ONLINE:
            return "online"
        if self.kind is PolicyKind.STATEFUL_INCREMENTAL:
            return f"stateful-c{self.cadence_days}"
        if self.expanding_window:
            return f"batch-c{self.cadence_days}"
        return f"stateless-w{self.window_days}-c{self.cadence_days}"


@dataclass
class CostMeter:
    """Counts every sgd_step a policy performs, with a per-session log"""

    total_example_updates: int = 0
    retrain_sessions: int = 0
    sessions: List[Tuple[int, int]] = field(default_factory=list)

    def record(self, day: int, updates: int) -> None:
        self.total_example_updates += updates
        self.retrain_sessions += 1
        self.sessions.append((day, updates))

    @property
    def first_session_day(self) -> Optional[int]:
        return self.sessions[0][0] if self.sessions else None

    def since(self, day: int) -> "CostMeter":
        """Meter restricted to sessions at boundary days >= day"""
        restricted = CostMeter()
        for session_day, updates in self.sessions:
            if session_day >= day:
                restricted.record(session_day, updates)
        return restricted

    def to_dict(self) -> Dict[str, Any]:
        return {
            'total_example_updates': self.total_example_updates,
            'retrain_sessions': self.retrain_sessions,
            'sessions': [[d, n] for d, n in self.sessions],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CostMeter":
        meter = cls()
        for day, updates in data.get('sessions', []):
            meter.record(int(day), int(updates))
        return meter


def cost_ratio(stateless_meter: CostMeter, stateful_meter: CostMeter) -> float:
    """Ratio of total example updates between two meters"""
    if stateful_meter.total_example_updates == 0:
        raise UndefinedRatioError("denominator meter recorded no updates")
    return stateless_meter.total_example_updates / stateful_meter.total_example_updates


def steady_state_cost_ratio(meter: CostMeter, reference: CostMeter) -> float:
    """cost_ratio over the span where both meters have started training"""
    starts = [d for d in (meter.first_session_day, reference.first_session_day) if d is not None]
    if not starts:
        raise UndefinedRatioError("neither meter recorded a session")
    common = max(starts)
    return cost_ratio(meter.since(common), reference.since(common))


class RetrainScheduler:
    """Drives one policy over one stream, owning the state and the meter"""

    def __init__(self, policy: RetrainPolicy, config: ModelConfig,
                 initial_state: Optional[ModelState] = None,
                 prior_events: Sequence[Event] = (),
                 prior_days: Optional[int] = None):
        self.policy = policy
        self.config = initial_state.config if initial_state is not None else config
        self.state = initial_state.copy() if initial_state is not None else init_model(self.config)
        self.warm_started = initial_state is not None
        self.prior_events = list(prior_events)
        self.prior_days = prior_days
        self.meter = CostMeter()
        self.session_index = 0
        self.pending: List[Event] = []
        self.history: List[List[Event]] = []

    def _train(self, events: Sequence[Event]) -> int:
        """One session: epochs_per_retrain passes over events"""
        order = np.arange(len(events))
        rng = None
        if self.policy.shuffle:
            rng = np.random.default_rng(derive_seed(self.config.seed, self.session_index, 1))
        updates = 0
        for _ in range(self.policy.epochs_per_retrain):
            if rng is not None:
                order = rng.permutation(len(events))
            for k in order:
                sgd_step(self.state, events[int(k)])
                updates += 1
        return updates

    def _finish_session(self, day: int, updates: int) -> None:
        self.meter.record(day, updates)
        self.session_index += 1
        logger.debug(
            f"{self.policy.descriptor}: session {self.session_index} at day {day} "
            f"({updates} updates, {self.meter.total_example_updates} total)"
        )

    def _stateless_session(self, day: int) -> None:
        window = self.history if self.policy.expanding_window else self.history[-self.policy.window_days:]
        events = [e for day_events in window for e in day_events]
        session_config = self.config.replace(seed=derive_seed(self.config.seed, self.session_index))
        self.state = init_model(session_config)
        # the retrained model keeps the run's identity
        self.state.config = self.config
        self._finish_session(day, self._train(events))

    def _stateful_session(self, day: int) -> None:
        events, self.pending = self.pending, []
        self._finish_session(day, self._train(events))

    def _end_of_day(self, day: int) -> None:
        kind = self.policy.kind
        if kind is PolicyKind.NONE:
            if day == 1 and not self.warm_started:
                self._stateful_session(day)
            return
        if day % self.policy.cadence_days != 0:
            return
        if kind is PolicyKind.STATEFUL_INCREMENTAL:
            self._stateful_session(day)
        elif kind is PolicyKind.STATELESS_WINDOW:
            if self.policy.expanding_window or len(self.history) >= self.policy.window_days:
                self._stateless_session(day)

    def _count_prior_days(self, all_days: List[List[Event]]) -> int:
        """Calendar days covered by prior_events, counted from the first prior event"""
        if self.prior_days is not None:
            if self.prior_days > len(all_days):
                raise ConfigurationError(
                    f"prior_days={self.prior_days} exceeds the {len(all_days)} days in the data"
                )
            return self.prior_days
        if not self.prior_events:
            return 0
        first_ts = self.prior_events[0].timestamp
        return day_of(self.prior_events[-1].timestamp, first_ts) + 1

    def run(self, stream: Sequence[Event], eval_hook: Optional[EvalHook] = None,
            day_start_hook: Optional[DayStartHook] = None) -> Tuple[ModelState, CostMeter]:
        combined = self.prior_events + list(stream)
        all_days = group_by_day(combined)
        prior_days = self._count_prior_days(all_days)
        self.history = [list(d) for d in all_days[:prior_days]]
        stream_days = all_days[prior_days:]

        logger.info(
            f"Running policy {self.policy.descriptor} over {len(stream_days)} days "
            f"({len(stream)} events, {prior_days} prior days)"
        )

        for day, day_events in enumerate(stream_days, start=1):
            if day_start_hook is not None:
                day_start_hook(day, self.state)

            if self.policy.kind is PolicyKind.FULLY_ONLINE:
                for event in day_events:
                    if eval_hook is not None:
                        eval_hook(event, predict(self.state, event.user_id, event.item_id, event.context))
                    sgd_step(self.state, event)
                if day_events:
                    self._finish_session(day, len(day_events))
                continue

            if eval_hook is not None:
                for event in day_events:
                    eval_hook(event, predict(self.state, event.user_id, event.item_id, event.context))
            self.history.append(day_events)
            self.pending.extend(day_events)
            self._end_of_day(day)

        logger.info(
            f"Policy {self.policy.descriptor} finished: "
            f"{self.meter.total_example_updates} updates in {self.meter.retrain_sessions} sessions"
        )
        return self.state, self.meter


def run_policy(policy: RetrainPolicy, config: ModelConfig, stream: Sequence[Event],
               eval_hook: Optional[EvalHook] = None,
               initial_state: Optional[ModelState] = None,
               prior_events: Sequence[Event] = (),
               day_start_hook: Optional[DayStartHook] = None,
               prior_days: Optional[int] = None) -> Tuple[ModelState, CostMeter]:
    """Run a retraining policy over an ordered stream.

    initial_state warm-starts the run (pre-trained or loaded from a
    checkpoint); prior_events are days already seen before the stream, which
    count toward stateless windows but are never re-trained by stateful
    policies. prior_days pins how many calendar days of the combined data
    belong to prior_events; when omitted it is the span of prior_events, so
    empty days between the two stay on the stream side.
    """
    scheduler = RetrainScheduler(policy, config, initial_state=initial_state,
                                 prior_events=prior_events, prior_days=prior_days)
    return scheduler.run(stream, eval_hook=eval_hook, day_start_hook=day_start_hook)
