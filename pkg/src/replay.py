"""
Prequential replay: pre-train on logged days, then walk the remaining stream
predicting every event before any update may use it
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import Field
from scipy.stats import rankdata

from config import CONVERGENCE_TOLERANCE, PRETRAIN_MAX_PASSES, PRETRAIN_TOLERANCE
from .datagen import Event, day_of, group_by_day
from .exceptions import ComparisonError, ConfigurationError, DataError, UndefinedRatioError
from .model import ModelConfig, ModelState, Prediction, init_model, log_loss, predict, sgd_step
from .policies import CostMeter, RetrainPolicy, cost_ratio, run_policy
from .utils import ValidatedConfig

logger = logging.getLogger(__name__)


class MetricsWindow(str, Enum):
    PER_DAY = "per_day"
    CUMULATIVE = "cumulative"


class ReplaySpec(ValidatedConfig):
    """Pre-train span, fine-tune policy and how the metric series is windowed"""

    pretrain_days: int = Field(default=0, ge=0)
    policy: RetrainPolicy
    metrics_window: MetricsWindow = MetricsWindow.PER_DAY
    pretrain_until_converged: bool = True
    pretrain_epochs: int = Field(default=1, ge=1)


@dataclass
class DayMetrics:
    day: int
    events: int
    log_loss: Optional[float]
    auc: Optional[float]


@dataclass
class ReplayReport:
    """Metric series, hold-out loss and cost of one policy replay"""

    policy: str
    days: List[DayMetrics]
    final_holdout_log_loss: float
    cost: CostMeter
    cumulative_auc: Optional[float]
    auc_standard_error: Optional[float]
    span: Tuple[int, int, int]
    pretrain_passes: int = 0
    pretrain_updates: int = 0
    convergence_day: Optional[int] = None
    scored: List[Tuple[float, int]] = field(default_factory=list, repr=False)

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{
                'day': m.day,
                'policy': self.policy,
                'events': m.events,
                'log_loss': m.log_loss,
                'auc': m.auc,
            } for m in self.days],
            columns=['day', 'policy', 'events', 'log_loss', 'auc'],
        )

    def summary(self) -> Dict[str, Any]:
        return {
            'policy': self.policy,
            'cumulative_auc': self.cumulative_auc,
            'auc_standard_error': self.auc_standard_error,
            'final_holdout_log_loss': self.final_holdout_log_loss,
            'total_example_updates': self.cost.total_example_updates,
            'retrain_sessions': self.cost.retrain_sessions,
            'sessions': self.cost.to_dict()['sessions'],
            'span': list(self.span),
            'pretrain_passes': self.pretrain_passes,
            'pretrain_updates': self.pretrain_updates,
            'convergence_day': self.convergence_day,
        }


def compute_auc(scored: Sequence[Tuple[float, int]]) -> Optional[float]:
    """Mann-Whitney AUC with average ranks for ties; None when a class is absent"""
    if len(scored) == 0:
        raise DataError("cannot compute AUC of an empty set")
    scores = np.asarray([s for s, _ in scored], dtype=np.float64)
    labels = np.asarray([y for _, y in scored], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = int(labels.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method='average')
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_standard_error(auc: float, n_pos: int, n_neg: int) -> float:
    """Hanley-McNeil standard error of an AUC estimate"""
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    variance = (
        auc * (1.0 - auc)
        + (n_pos - 1) * (q1 - auc * auc)
        + (n_neg - 1) * (q2 - auc * auc)
    ) / (n_pos * n_neg)
    return float(np.sqrt(max(variance, 0.0)))


def convergence_day(series: Sequence[Tuple[int, float]], tolerance: float = CONVERGENCE_TOLERANCE) -> Optional[int]:
    """First day whose log loss is within tolerance (relative) of the final value"""
    points = [(d, v) for d, v in series if v is not None and np.isfinite(v)]
    if not points:
        return None
    final = points[-1][1]
    for day, value in points:
        if abs(value - final) <= tolerance * abs(final):
            return day
    return points[-1][0]


def pretrain(state: ModelState, events: Sequence[Event], until_converged: bool = True,
             epochs: int = 1, tolerance: float = PRETRAIN_TOLERANCE,
             max_passes: int = PRETRAIN_MAX_PASSES) -> Tuple[int, int]:
    """Offline passes over logged events; returns (passes, updates).

    With until_converged, passes continue until the mean training log loss
    improves by less than tolerance (relative) or max_passes is reached.
    """
    if not events:
        return 0, 0
    limit = max_passes if until_converged else epochs
    previous = None
    passes = updates = 0
    while passes < limit:
        losses = [sgd_step(state, e) for e in events]
        passes += 1
        updates += len(losses)
        mean_loss = float(np.mean(losses))
        logger.info(f"Pre-train pass {passes}: mean log loss {mean_loss:.6f}")
        if until_converged and previous is not None and (previous - mean_loss) / previous < tolerance:
            break
        previous = mean_loss
    return passes, updates


class PrequentialRecorder:
    """Eval hook collecting (probability, label, loss) per day"""

    def __init__(self, origin_ts: int):
        self.origin_ts = origin_ts
        self.by_day: Dict[int, List[Tuple[float, int, float]]] = {}
        self.scored: List[Tuple[float, int]] = []

    def __call__(self, event: Event, prediction: Prediction) -> None:
        day = day_of(event.timestamp, self.origin_ts) + 1
        loss = log_loss(prediction.probability, event.label)
        self.by_day.setdefault(day, []).append((prediction.probability, event.label, loss))
        self.scored.append((prediction.probability, event.label))


def _window_metrics(rows: List[Tuple[float, int, float]], day: int, events: int) -> DayMetrics:
    if not rows:
        return DayMetrics(day=day, events=events, log_loss=None, auc=None)
    return DayMetrics(
        day=day,
        events=events,
        log_loss=float(np.mean([r[2] for r in rows])),
        auc=compute_auc([(r[0], r[1]) for r in rows]),
    )


def replay(spec: ReplaySpec, config: ModelConfig, stream: Sequence[Event],
           initial_state: Optional[ModelState] = None,
           state_sink: Optional[Dict[str, ModelState]] = None) -> ReplayReport:
    """Pre-train, then replay the fine-tune span prequentially under spec.policy.

    The last day of the stream is the hold-out: its loss is measured with a
    snapshot taken at the start of that day, so no policy has trained on it.
    When state_sink is given, the final state is stored under "final".
    """
    days = group_by_day(list(stream))
    total_days = len(days)
    if spec.pretrain_days >= total_days:
        raise ConfigurationError(
            f"pretrain_days={spec.pretrain_days} leaves nothing to replay in a {total_days}-day stream"
        )

    if initial_state is not None:
        config = initial_state.config
    origin_ts = days[0][0].timestamp
    pretrain_events = [e for d in days[:spec.pretrain_days] for e in d]
    finetune_events = [e for d in days[spec.pretrain_days:] for e in d]

    state = initial_state.copy() if initial_state is not None else init_model(config)
    passes, pretrain_updates = pretrain(
        state, pretrain_events,
        until_converged=spec.pretrain_until_converged,
        epochs=spec.pretrain_epochs,
    )
    warm = initial_state is not None or spec.pretrain_days > 0

    recorder = PrequentialRecorder(origin_ts)
    finetune_days = total_days - spec.pretrain_days
    holdout_day = finetune_days
    snapshot: Dict[str, ModelState] = {}

    def on_day_start(day: int, current: ModelState) -> None:
        if day == holdout_day:
            snapshot['holdout'] = current.copy()

    logger.info(
        f"Replaying {spec.policy.descriptor}: {spec.pretrain_days} pre-train days "
        f"({passes} passes), {finetune_days} fine-tune days"
    )
    final_state, meter = run_policy(
        spec.policy, config, finetune_events,
        eval_hook=recorder,
        initial_state=state if warm else None,
        prior_events=pretrain_events,
        day_start_hook=on_day_start,
        prior_days=spec.pretrain_days,
    )
    if state_sink is not None:
        state_sink["final"] = final_state

    holdout_state = snapshot['holdout']
    holdout_losses = [
        log_loss(predict(holdout_state, e.user_id, e.item_id, e.context).probability, e.label)
        for e in days[-1]
    ]
    final_holdout = float(np.mean(holdout_losses))

    series: List[DayMetrics] = []
    running: List[Tuple[float, int, float]] = []
    for offset in range(finetune_days):
        day = spec.pretrain_days + offset + 1
        rows = recorder.by_day.get(day, [])
        running.extend(rows)
        window = running if spec.metrics_window is MetricsWindow.CUMULATIVE else rows
        series.append(_window_metrics(window, day, len(rows)))

    cumulative_auc = compute_auc(recorder.scored) if recorder.scored else None
    standard_error = None
    if cumulative_auc is not None:
        n_pos = sum(y for _, y in recorder.scored)
        standard_error = auc_standard_error(cumulative_auc, n_pos, len(recorder.scored) - n_pos)

    per_day_losses = [
        (day, float(np.mean([r[2] for r in rows]))) for day, rows in sorted(recorder.by_day.items())
    ]
    report = ReplayReport(
        policy=spec.policy.descriptor,
        days=series,
        final_holdout_log_loss=final_holdout,
        cost=meter,
        cumulative_auc=cumulative_auc,
        auc_standard_error=standard_error,
        span=(spec.pretrain_days + 1, total_days, len(finetune_events)),
        pretrain_passes=passes,
        pretrain_updates=pretrain_updates,
        convergence_day=convergence_day(per_day_losses),
        scored=recorder.scored,
    )
    logger.info(
        f"Replay {report.policy}: cumulative AUC {cumulative_auc}, "
        f"hold-out log loss {final_holdout:.6f}, {meter.total_example_updates} updates"
    )
    return report


def _lift_cost_ratio(report: ReplayReport, baseline: ReplayReport) -> float:
    """Fine-tune update ratio, or totals including pre-training when the baseline never fine-tuned"""
    try:
        return cost_ratio(report.cost, baseline.cost)
    except UndefinedRatioError:
        pass
    denominator = baseline.pretrain_updates + baseline.cost.total_example_updates
    if denominator == 0:
        return float('nan')
    return (report.pretrain_updates + report.cost.total_example_updates) / denominator


def lift_table(reports: Sequence[ReplayReport], baseline_index: int = 0) -> pd.DataFrame:
    """Relative cumulative-AUC lift and cost ratio of each report against a baseline"""
    if len(reports) < 2:
        raise ConfigurationError("lift table needs at least two reports")
    if not 0 <= baseline_index < len(reports):
        raise ConfigurationError(f"baseline index {baseline_index} out of range")

    baseline = reports[baseline_index]
    rows = []
    for report in reports:
        if report.span != baseline.span:
            raise ComparisonError(
                f"{report.policy} covers {report.span}, baseline {baseline.policy} covers {baseline.span}"
            )
        if report.cumulative_auc is None or baseline.cumulative_auc is None:
            lift = float('nan')
        else:
            lift = 100.0 * (report.cumulative_auc - baseline.cumulative_auc) / baseline.cumulative_auc
        ratio = _lift_cost_ratio(report, baseline) if report is not baseline else 1.0
        rows.append({
            'policy': report.policy,
            'cumulative_auc': report.cumulative_auc,
            'relative_auc_lift_percent': lift,
            'cost_ratio': ratio,
        })
    return pd.DataFrame(rows, columns=['policy', 'cumulative_auc', 'relative_auc_lift_percent', 'cost_ratio'])
