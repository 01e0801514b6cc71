"""
Command-line entry point for the Stateful Online Recommender Lab

    python app.py gen        --seed 7 --days 12 --out events.jsonl
    python app.py replay     --events events.jsonl --policy stateful --cadence-days 1
    python app.py compare    --events events.jsonl --policies none,stateful-weekly,stateful-daily
    python app.py collisions --num-ids 200000 --buckets 500000,1000000,2000000
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

import config
from src.checkpoint import load as load_checkpoint
from src.checkpoint import save as save_checkpoint
from src.datagen import DriftGenConfig, Event, generate, read_events, write_events
from src.exceptions import (
    ConfigurationError,
    DataError,
    IntegrityError,
    NumericDivergenceError,
    OnlineLearningError,
    UndefinedRatioError,
)
from src.hashing import HashConfig, HashMode, collision_sweep, synthesize_ids
from src.model import ModelConfig, ModelState
from src.policies import CostMeter, PolicyKind, RetrainPolicy, steady_state_cost_ratio
from src.replay import MetricsWindow, ReplayReport, ReplaySpec, lift_table, replay
from src.utils import (
    derive_seed,
    export_frame_to_csv,
    file_sha256,
    load_json_file,
    save_json_file,
    setup_logging,
)

logger = logging.getLogger("app")


@dataclass
class RunManifest:
    """What was run, with which inputs, producing which outputs"""

    command: str
    configuration: Dict[str, Any]
    input_digests: Dict[str, str] = field(default_factory=dict)
    output_paths: List[str] = field(default_factory=list)
    tool_version: str = f"{config.TOOL_NAME} {config.TOOL_VERSION}"

    def write(self, path: str) -> None:
        save_json_file(asdict(self), path)
        logger.info(f"Manifest written to {path}")


class UsageError(ConfigurationError):
    """Flag combination rejected before any work starts"""


def output_dir(args: argparse.Namespace) -> str:
    return args.output_dir or config.OUTPUT_DIR


def parse_cadence(text: str) -> int:
    if text in config.CADENCE_ALIASES:
        return config.CADENCE_ALIASES[text]
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"unknown cadence {text!r}")
    if value < 1:
        raise UsageError(f"cadence must be positive, got {value}")
    return value


def parse_policy_name(name: str, epochs: int = 1, shuffle: bool = False) -> RetrainPolicy:
    """Parse compare-style policy names.

    none | online | stateful-<cadence> | stateless-<window>-<cadence> | batch-<cadence>
    where <cadence> is daily, weekly or a number of days.
    """
    parts = name.strip().lower().split('-')
    kind = parts[0]
    common = {'epochs_per_retrain': epochs, 'shuffle': shuffle}
    if kind == 'none' and len(parts) == 1:
        return RetrainPolicy(kind=PolicyKind.NONE, **common)
    if kind == 'online' and len(parts) == 1:
        return RetrainPolicy(kind=PolicyKind.FULLY_ONLINE, **common)
    if kind == 'stateful' and len(parts) == 2:
        return RetrainPolicy(kind=PolicyKind.STATEFUL_INCREMENTAL, cadence_days=parse_cadence(parts[1]), **common)
    if kind == 'batch' and len(parts) == 2:
        return RetrainPolicy(kind=PolicyKind.STATELESS_WINDOW, expanding_window=True,
                             cadence_days=parse_cadence(parts[1]), **common)
    if kind == 'stateless' and len(parts) == 3:
        try:
            window = int(parts[1])
        except ValueError:
            raise UsageError(f"bad window in policy {name!r}")
        return RetrainPolicy(kind=PolicyKind.STATELESS_WINDOW, window_days=window,
                             cadence_days=parse_cadence(parts[2]), **common)
    raise UsageError(f"unknown policy {name!r}")


def policy_from_flags(args: argparse.Namespace) -> RetrainPolicy:
    kinds = {
        'none': PolicyKind.NONE,
        'stateless': PolicyKind.STATELESS_WINDOW,
        'batch': PolicyKind.STATELESS_WINDOW,
        'stateful': PolicyKind.STATEFUL_INCREMENTAL,
        'online': PolicyKind.FULLY_ONLINE,
    }
    return RetrainPolicy(
        kind=kinds[args.policy],
        window_days=args.window_days,
        cadence_days=args.cadence_days,
        epochs_per_retrain=args.epochs,
        expanding_window=args.policy == 'batch',
        shuffle=args.shuffle,
    )


def model_config_from_flags(args: argparse.Namespace, context_dim: int) -> ModelConfig:
    """Model config; hash seeds are derived from --seed so one flag pins the run"""
    mode = HashMode.DOUBLE if args.double_hash else HashMode.SINGLE

    def hashing(offset: int) -> HashConfig:
        return HashConfig(
            buckets=args.buckets,
            mode=mode,
            seed_a=derive_seed(args.seed, offset),
            seed_b=derive_seed(args.seed, offset + 1),
        )

    return ModelConfig(
        embedding_dim=args.dim,
        learning_rate=args.lr,
        l2_reg=args.l2,
        context_dim=context_dim,
        hash_config_user=hashing(1),
        hash_config_item=hashing(3),
        init_scale=args.init_scale,
        seed=args.seed,
    )


def load_stream(path: str) -> List[Event]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"event file not found: {path}")
    events = read_events(path)
    if not events:
        raise DataError(f"event file {path} is empty")
    return events


def _replay_worker(task: Tuple[ReplaySpec, ModelConfig, List[Event], Optional[ModelState]]) -> ReplayReport:
    spec, model_config, events, initial_state = task
    return replay(spec, model_config, events, initial_state=initial_state)


def _resolved(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ('handler', 'output_dir')}


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate a synthetic drifting event log"""
    gen_config = DriftGenConfig(
        seed=args.seed,
        num_users=args.users,
        num_items_initial=args.items,
        latent_dim=args.latent_dim,
        days=args.days,
        events_per_day=args.events_per_day,
        drift_rate=args.drift_rate,
        churn_rate=args.churn_rate,
        context_dim=args.context_dim,
        label_bias=args.label_bias,
    )
    out = args.out or os.path.join(output_dir(args), config.EVENTS_FILENAME)
    write_events(generate(gen_config), out)

    RunManifest(
        command='gen',
        configuration={**_resolved(args), 'out': out, 'resolved': gen_config.model_dump(mode='json')},
        output_paths=[out],
    ).write(f"{out}.manifest.json")
    return config.EXIT_CODES['success']


def load_cost_reference(path: str) -> CostMeter:
    """Cost meter of a reference run, read from its replay summary"""
    try:
        document = load_json_file(path)
    except ValueError as e:
        raise DataError(f"{path}: not valid JSON ({e})")
    if not isinstance(document, dict) or 'sessions' not in document:
        raise DataError(f"{path} is not a replay summary (no 'sessions' entry)")
    try:
        return CostMeter.from_dict(document)
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed sessions entry ({e})")


def _pretrain_options(args: argparse.Namespace) -> Dict[str, Any]:
    if args.pretrain_epochs is None:
        return {'pretrain_until_converged': True}
    return {'pretrain_until_converged': False, 'pretrain_epochs': args.pretrain_epochs}


def cmd_replay(args: argparse.Namespace) -> int:
    """Replay one policy over an event log"""
    events = load_stream(args.events)
    initial_state = load_checkpoint(args.init_from) if args.init_from else None
    if initial_state is not None:
        model_config = initial_state.config
    else:
        model_config = model_config_from_flags(args, context_dim=len(events[0].context))

    spec = ReplaySpec(
        pretrain_days=args.pretrain_days,
        policy=policy_from_flags(args),
        metrics_window=MetricsWindow(args.metrics_window),
        **_pretrain_options(args),
    )
    digests = {args.events: file_sha256(args.events)}
    reference = None
    if args.cost_reference:
        # digest before outputs are written, the reference may live in the same directory
        digests[args.cost_reference] = file_sha256(args.cost_reference)
        reference = load_cost_reference(args.cost_reference)
    captured: Dict[str, ModelState] = {}
    report = replay(spec, model_config, events, initial_state=initial_state, state_sink=captured)

    directory = output_dir(args)
    metrics_path = os.path.join(directory, config.METRICS_FILENAME)
    summary_path = os.path.join(directory, config.SUMMARY_FILENAME)
    export_frame_to_csv(report.metrics_frame(), metrics_path)
    summary = report.summary()
    if reference is not None:
        try:
            summary['steady_state_cost_ratio'] = steady_state_cost_ratio(report.cost, reference)
        except UndefinedRatioError:
            summary['steady_state_cost_ratio'] = None
    save_json_file(summary, summary_path)
    outputs = [metrics_path, summary_path]

    if args.save_model:
        save_checkpoint(captured["final"], args.save_model)
        outputs.append(args.save_model)

    if args.init_from:
        digests[args.init_from] = file_sha256(args.init_from)
    RunManifest(
        command='replay',
        configuration={**_resolved(args), 'model': model_config.model_dump(mode='json'),
                       'spec': spec.model_dump(mode='json')},
        input_digests=digests,
        output_paths=outputs,
    ).write(os.path.join(directory, config.MANIFEST_FILENAME))
    return config.EXIT_CODES['success']


def cmd_compare(args: argparse.Namespace) -> int:
    """Replay several policies on the same stream and tabulate lift"""
    names = [n for n in args.policies.split(',') if n.strip()]
    if len(names) < 2:
        raise UsageError(config.ERROR_MESSAGES['too_few_policies'])
    policies = [parse_policy_name(n, epochs=args.epochs) for n in names]
    if not 0 <= args.baseline < len(policies):
        raise UsageError(f"--baseline must index one of the {len(policies)} policies")

    events = load_stream(args.events)
    model_config = model_config_from_flags(args, context_dim=len(events[0].context))
    tasks = [
        (ReplaySpec(pretrain_days=args.pretrain_days, policy=p, **_pretrain_options(args)),
         model_config, events, None)
        for p in policies
    ]

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as executor:
            reports = list(executor.map(_replay_worker, tasks))
    else:
        reports = [_replay_worker(t) for t in tasks]

    table = lift_table(reports, baseline_index=args.baseline)
    table.insert(0, 'name', names)

    directory = output_dir(args)
    lift_path = os.path.join(directory, config.LIFT_FILENAME)
    metrics_path = os.path.join(directory, config.METRICS_FILENAME)
    summary_path = os.path.join(directory, config.SUMMARY_FILENAME)
    export_frame_to_csv(table, lift_path)
    export_frame_to_csv(pd.concat([r.metrics_frame() for r in reports], ignore_index=True), metrics_path)

    baseline = reports[args.baseline]
    summaries = []
    for name, report in zip(names, reports):
        summary = report.summary()
        summary['name'] = name
        try:
            summary['steady_state_cost_ratio'] = steady_state_cost_ratio(report.cost, baseline.cost)
        except UndefinedRatioError:
            summary['steady_state_cost_ratio'] = None
        summaries.append(summary)
    save_json_file({'baseline': names[args.baseline], 'reports': summaries}, summary_path)

    RunManifest(
        command='compare',
        configuration={**_resolved(args), 'model': model_config.model_dump(mode='json'),
                       'policies': [p.model_dump(mode='json') for p in policies]},
        input_digests={args.events: file_sha256(args.events)},
        output_paths=[lift_path, metrics_path, summary_path],
    ).write(os.path.join(directory, config.MANIFEST_FILENAME))
    return config.EXIT_CODES['success']


def read_ids_file(path: str) -> List[str]:
    """Distinct non-empty ids, one per line, first occurrence kept"""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"ids file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        lines = [line.strip() for line in f]
    ids = list(dict.fromkeys(line for line in lines if line))
    skipped = sum(1 for line in lines if line) - len(ids)
    if skipped:
        logger.warning(f"Dropped {skipped} duplicate ids from {path}")
    if not ids:
        raise DataError(f"ids file {path} holds no ids")
    return ids


def cmd_collisions(args: argparse.Namespace) -> int:
    """Sweep collision rates over bucket counts"""
    try:
        buckets = [int(b) for b in args.buckets.split(',') if b.strip()]
    except ValueError:
        raise UsageError(f"--buckets must be a comma-separated list of integers, got {args.buckets!r}")

    if args.ids_file:
        ids = read_ids_file(args.ids_file)
        digests = {args.ids_file: file_sha256(args.ids_file)}
    else:
        ids = synthesize_ids(args.num_ids, args.seed)
        digests = {}

    hash_config = HashConfig(
        buckets=buckets[0] if buckets else 1,
        mode=HashMode.DOUBLE if args.double else HashMode.SINGLE,
        seed_a=args.seed,
        seed_b=derive_seed(args.seed, 1),
    )
    reports = collision_sweep(hash_config, ids, buckets, workers=args.workers)

    directory = output_dir(args)
    csv_path = os.path.join(directory, config.COLLISIONS_FILENAME)
    frame = pd.DataFrame([r.to_row() for r in reports],
                         columns=['buckets', 'mode', 'num_ids', 'empirical_rate', 'expected_rate'])
    export_frame_to_csv(frame, csv_path)

    RunManifest(
        command='collisions',
        configuration={**_resolved(args), 'hash': hash_config.model_dump(mode='json')},
        input_digests=digests,
        output_paths=[csv_path],
    ).write(os.path.join(directory, config.MANIFEST_FILENAME))
    return config.EXIT_CODES['success']


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--events', required=True, help='Event log (JSON lines)')
    parser.add_argument('--pretrain-days', type=int, default=0)
    parser.add_argument('--pretrain-epochs', type=int, default=None,
                        help='Fixed pre-train passes; default is to run until the loss settles')
    parser.add_argument('--epochs', type=int, default=1, help='Passes per retraining session')
    parser.add_argument('--dim', type=int, default=config.DEFAULT_EMBEDDING_DIM)
    parser.add_argument('--lr', type=float, default=config.DEFAULT_LEARNING_RATE)
    parser.add_argument('--l2', type=float, default=config.DEFAULT_L2_REG)
    parser.add_argument('--init-scale', type=float, default=config.DEFAULT_INIT_SCALE)
    parser.add_argument('--buckets', type=int, default=config.DEFAULT_BUCKETS)
    parser.add_argument('--double-hash', action='store_true')
    parser.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    parser.add_argument('--output-dir', default=None, help='Defaults to $OUTPUT_DIR')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='app.py',
        description='Stateful online learning experiments for a hashed-embedding recommender',
    )
    parser.add_argument('--log-level', default=None)
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', help='Generate a synthetic drifting event log')
    gen.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    gen.add_argument('--users', type=int, default=config.DEFAULT_USERS)
    gen.add_argument('--items', type=int, default=config.DEFAULT_ITEMS)
    gen.add_argument('--latent-dim', type=int, default=config.DEFAULT_LATENT_DIM)
    gen.add_argument('--days', type=int, default=config.DEFAULT_DAYS)
    gen.add_argument('--events-per-day', type=int, default=config.DEFAULT_EVENTS_PER_DAY)
    gen.add_argument('--drift-rate', type=float, default=config.DEFAULT_DRIFT_RATE)
    gen.add_argument('--churn-rate', type=float, default=config.DEFAULT_CHURN_RATE)
    gen.add_argument('--context-dim', type=int, default=config.DEFAULT_CONTEXT_DIM)
    gen.add_argument('--label-bias', type=float, default=config.DEFAULT_LABEL_BIAS)
    gen.add_argument('--out', default=None)
    gen.add_argument('--output-dir', default=None, help='Used when --out is not given')
    gen.set_defaults(handler=cmd_gen)

    rep = sub.add_parser('replay', help='Prequential replay of one retraining policy')
    _add_model_flags(rep)
    rep.add_argument('--policy', choices=['none', 'stateless', 'batch', 'stateful', 'online'], required=True)
    rep.add_argument('--window-days', type=int, default=1)
    rep.add_argument('--cadence-days', type=int, default=1)
    rep.add_argument('--shuffle', action='store_true')
    rep.add_argument('--metrics-window', choices=[m.value for m in MetricsWindow], default='per_day')
    rep.add_argument('--save-model', default=None, help='Write the final state as a checkpoint')
    rep.add_argument('--init-from', default=None, help='Start from a saved checkpoint')
    rep.add_argument('--cost-reference', default=None,
                     help='Replay summary whose sessions anchor steady_state_cost_ratio')
    rep.set_defaults(handler=cmd_replay)

    cmp_ = sub.add_parser('compare', help='Replay several policies and tabulate lift')
    _add_model_flags(cmp_)
    cmp_.add_argument('--policies', required=True,
                      help='Comma list, e.g. none,stateful-weekly,stateful-daily,stateless-4-daily,online')
    cmp_.add_argument('--baseline', type=int, default=0, help='Index of the baseline policy')
    cmp_.add_argument('--workers', type=int, default=1)
    cmp_.set_defaults(handler=cmd_compare)

    col = sub.add_parser('collisions', help='Collision rate vs bucket count')
    source = col.add_mutually_exclusive_group()
    source.add_argument('--num-ids', type=int, default=config.DEFAULT_NUM_IDS)
    source.add_argument('--ids-file', default=None)
    col.add_argument('--buckets', default=','.join(str(b) for b in config.DEFAULT_COLLISION_BUCKETS))
    col.add_argument('--double', action='store_true')
    col.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    col.add_argument('--workers', type=int, default=1)
    col.add_argument('--output-dir', default=None, help='Defaults to $OUTPUT_DIR')
    col.set_defaults(handler=cmd_collisions)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application function; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)

    try:
        return args.handler(args)
    except ConfigurationError as e:
        logger.error(f"{args.command}: {e}")
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return config.EXIT_CODES['usage']
    except (DataError, IntegrityError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return config.EXIT_CODES['data']
    except NumericDivergenceError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {config.ERROR_MESSAGES['divergence']} ({e})", file=sys.stderr)
        return config.EXIT_CODES['divergence']
    except OSError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {config.ERROR_MESSAGES['io']} ({e})", file=sys.stderr)
        return config.EXIT_CODES['io']
    except OnlineLearningError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return config.EXIT_CODES['data']


if __name__ == "__main__":
    sys.exit(main())
