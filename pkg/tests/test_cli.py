"""
Tests for the command-line entry point
"""

import json
import os
import sys

import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import app
import config
from src.policies import CostMeter, steady_state_cost_ratio
from src.utils import file_sha256, load_json_file


def gen(tmp_path, name="events.jsonl", *extra):
    out = str(tmp_path / name)
    code = app.main([
        'gen', '--seed', '7', '--users', '20', '--items', '10', '--latent-dim', '4',
        '--days', '3', '--events-per-day', '50', '--out', out, *extra,
    ])
    return code, out


@pytest.fixture
def events_file(tmp_path):
    code, out = gen(tmp_path)
    assert code == 0
    return out


class TestGen:
    """Test the gen command"""

    def test_line_count_and_manifest(self, tmp_path):
        code, out = gen(tmp_path)
        assert code == config.EXIT_CODES['success']
        with open(out) as f:
            assert sum(1 for _ in f) == 150

        manifest = load_json_file(f"{out}.manifest.json")
        assert manifest['command'] == 'gen'
        assert manifest['output_paths'] == [out]
        assert manifest['configuration']['resolved']['days'] == 3
        assert manifest['tool_version'].startswith(config.TOOL_NAME)

    def test_deterministic(self, tmp_path):
        _, first = gen(tmp_path, "a.jsonl")
        _, second = gen(tmp_path, "b.jsonl")
        assert file_sha256(first) == file_sha256(second)

    def test_large_catalog_line_count(self, tmp_path):
        """500 users, 300 items, 12 days of 2000 events: 24,000 lines"""
        out = str(tmp_path / "events.jsonl")
        assert app.main(['gen', '--seed', '7', '--users', '500', '--items', '300', '--days', '12',
                         '--events-per-day', '2000', '--drift-rate', '0.2', '--churn-rate', '0.05',
                         '--out', out]) == 0
        with open(out) as f:
            assert sum(1 for _ in f) == 24_000

    def test_zero_days_is_usage_error(self, tmp_path):
        code, out = gen(tmp_path, "events.jsonl", '--days', '0')
        assert code == config.EXIT_CODES['usage']
        assert not os.path.exists(out)


class TestReplay:
    """Test the replay command"""

    def test_outputs(self, tmp_path, events_file):
        out_dir = tmp_path / "run"
        code = app.main(['replay', '--events', events_file, '--policy', 'stateful',
                         '--buckets', '64', '--output-dir', str(out_dir)])
        assert code == 0

        metrics = pd.read_csv(out_dir / config.METRICS_FILENAME)
        assert list(metrics.columns) == ['day', 'policy', 'events', 'log_loss', 'auc']
        assert metrics['day'].tolist() == [1, 2, 3]
        summary = load_json_file(str(out_dir / config.SUMMARY_FILENAME))
        assert summary['total_example_updates'] == 150

        manifest = load_json_file(str(out_dir / config.MANIFEST_FILENAME))
        assert manifest['input_digests'] == {events_file: file_sha256(events_file)}

    def test_rerun_is_identical(self, tmp_path, events_file):
        for name in ("a", "b"):
            assert app.main(['replay', '--events', events_file, '--policy', 'online', '--buckets', '64',
                             '--output-dir', str(tmp_path / name)]) == 0
        for filename in (config.METRICS_FILENAME, config.SUMMARY_FILENAME):
            assert file_sha256(str(tmp_path / "a" / filename)) == file_sha256(str(tmp_path / "b" / filename))

    def test_window_cost_ratio_in_summaries(self, tmp_path):
        """stateless window 4 vs stateful daily: 4.0 over the common span"""
        out = str(tmp_path / "events.jsonl")
        assert app.main(['gen', '--seed', '3', '--users', '10', '--items', '10', '--days', '10',
                         '--events-per-day', '30', '--out', out]) == 0

        meters = []
        for name, flags in (("stateless", ['--window-days', '4']), ("stateful", [])):
            directory = tmp_path / name
            assert app.main(['replay', '--events', out, '--policy', name, '--cadence-days', '1',
                             '--buckets', '32', '--output-dir', str(directory), *flags]) == 0
            meters.append(CostMeter.from_dict(load_json_file(str(directory / config.SUMMARY_FILENAME))))
        assert steady_state_cost_ratio(*meters) == 4.0

    def test_cost_reference_ratio(self, tmp_path):
        """--cost-reference puts the steady-state ratio into the replay summary"""
        out = str(tmp_path / "events.jsonl")
        assert app.main(['gen', '--seed', '3', '--users', '10', '--items', '10', '--days', '10',
                         '--events-per-day', '30', '--out', out]) == 0
        reference = tmp_path / "stateful" / config.SUMMARY_FILENAME
        assert app.main(['replay', '--events', out, '--policy', 'stateful', '--buckets', '32',
                         '--output-dir', str(tmp_path / "stateful")]) == 0
        assert 'steady_state_cost_ratio' not in load_json_file(str(reference))

        directory = tmp_path / "stateless"
        assert app.main(['replay', '--events', out, '--policy', 'stateless', '--window-days', '4',
                         '--buckets', '32', '--output-dir', str(directory),
                         '--cost-reference', str(reference)]) == 0
        summary = load_json_file(str(directory / config.SUMMARY_FILENAME))
        assert summary['steady_state_cost_ratio'] == 4.0

        manifest = load_json_file(str(directory / config.MANIFEST_FILENAME))
        assert manifest['input_digests'][str(reference)] == file_sha256(str(reference))

    def test_cost_reference_must_be_a_summary(self, tmp_path, events_file):
        bogus = tmp_path / "bogus.json"
        bogus.write_text('{"policy": "online"}\n')
        code = app.main(['replay', '--events', events_file, '--policy', 'online',
                         '--output-dir', str(tmp_path / "run"), '--cost-reference', str(bogus)])
        assert code == config.EXIT_CODES['data']

    def test_fixed_pretrain_epochs(self, tmp_path, events_file):
        directory = tmp_path / "run"
        assert app.main(['replay', '--events', events_file, '--policy', 'stateful', '--buckets', '64',
                         '--pretrain-days', '1', '--pretrain-epochs', '3',
                         '--output-dir', str(directory)]) == 0
        summary = load_json_file(str(directory / config.SUMMARY_FILENAME))
        assert summary['pretrain_passes'] == 3
        assert summary['pretrain_updates'] == 3 * 50

    def test_save_and_init_from(self, tmp_path, events_file):
        checkpoint = str(tmp_path / "model.ckpt")
        assert app.main(['replay', '--events', events_file, '--policy', 'stateful', '--buckets', '64',
                         '--output-dir', str(tmp_path / "first"), '--save-model', checkpoint]) == 0
        assert os.path.getsize(checkpoint) > 108

        assert app.main(['replay', '--events', events_file, '--policy', 'none', '--init-from', checkpoint,
                         '--output-dir', str(tmp_path / "second")]) == 0
        summary = load_json_file(str(tmp_path / "second" / config.SUMMARY_FILENAME))
        assert summary['total_example_updates'] == 0

    def test_missing_input(self, tmp_path):
        out_dir = tmp_path / "run"
        code = app.main(['replay', '--events', str(tmp_path / "missing.jsonl"), '--policy', 'online',
                         '--output-dir', str(out_dir)])
        assert code == config.EXIT_CODES['io']
        assert not out_dir.exists()

    def test_bad_line_is_data_error(self, tmp_path, capsys):
        path = tmp_path / "events.jsonl"
        path.write_text('{"ts":1,"user":"u","item":"i","ctx":[],"label":2}\n')
        code = app.main(['replay', '--events', str(path), '--policy', 'online',
                         '--output-dir', str(tmp_path / "run")])
        assert code == config.EXIT_CODES['data']
        assert "line 1" in capsys.readouterr().err

    def test_missing_required_flag(self):
        assert app.main(['replay', '--policy', 'online']) == config.EXIT_CODES['usage']


class TestCompare:
    """Test the compare command"""

    def test_lift_table(self, tmp_path, events_file):
        out_dir = tmp_path / "cmp"
        code = app.main(['compare', '--events', events_file, '--policies', 'none,stateful-daily,online',
                         '--pretrain-days', '1', '--buckets', '64', '--output-dir', str(out_dir)])
        assert code == 0

        table = pd.read_csv(out_dir / config.LIFT_FILENAME)
        assert table['name'].tolist() == ['none', 'stateful-daily', 'online']
        assert table['relative_auc_lift_percent'].iloc[0] == 0.0
        assert table['cost_ratio'].iloc[0] == 1.0
        assert table['cost_ratio'].notna().all()

        summary = load_json_file(str(out_dir / config.SUMMARY_FILENAME))
        assert summary['baseline'] == 'none'
        assert len(summary['reports']) == 3

        metrics = pd.read_csv(out_dir / config.METRICS_FILENAME)
        assert len(metrics) == 3 * 2

    def test_documented_example_orders_cadences(self, tmp_path):
        """The README walkthrough: 12 drifting days, lift grows with retraining frequency"""
        out = str(tmp_path / "events.jsonl")
        assert app.main(['gen', '--seed', '7', '--days', '12', '--events-per-day', '2000',
                         '--drift-rate', '0.2', '--churn-rate', '0.05', '--out', out]) == 0

        out_dir = tmp_path / "cmp"
        assert app.main(['compare', '--events', out, '--policies', 'none,stateful-weekly,stateful-daily',
                         '--pretrain-days', '1', '--pretrain-epochs', '10',
                         '--output-dir', str(out_dir)]) == 0
        lifts = pd.read_csv(out_dir / config.LIFT_FILENAME)['relative_auc_lift_percent'].tolist()
        assert lifts[0] == 0.0
        assert 0.0 < lifts[1] < lifts[2]

    def test_parallel_matches_serial(self, tmp_path, events_file):
        for name, workers in (("serial", '1'), ("parallel", '2')):
            assert app.main(['compare', '--events', events_file, '--policies', 'stateful-daily,online',
                             '--buckets', '64', '--workers', workers,
                             '--output-dir', str(tmp_path / name)]) == 0
        assert file_sha256(str(tmp_path / "serial" / config.LIFT_FILENAME)) == \
            file_sha256(str(tmp_path / "parallel" / config.LIFT_FILENAME))

    def test_single_policy_is_usage_error(self, tmp_path, events_file):
        code = app.main(['compare', '--events', events_file, '--policies', 'online',
                         '--output-dir', str(tmp_path / "cmp")])
        assert code == config.EXIT_CODES['usage']

    def test_unknown_policy(self, tmp_path, events_file):
        code = app.main(['compare', '--events', events_file, '--policies', 'online,hourly',
                         '--output-dir', str(tmp_path / "cmp")])
        assert code == config.EXIT_CODES['usage']

    @pytest.mark.parametrize("name,descriptor", [
        ("none", "none"),
        ("online", "online"),
        ("stateful-weekly", "stateful-c7"),
        ("stateful-3", "stateful-c3"),
        ("stateless-4-daily", "stateless-w4-c1"),
        ("batch-daily", "batch-c1"),
    ])
    def test_policy_names(self, name, descriptor):
        assert app.parse_policy_name(name).descriptor == descriptor


class TestCollisions:
    """Test the collisions command"""

    def run(self, tmp_path, name, *flags):
        out_dir = tmp_path / name
        assert app.main(['collisions', '--output-dir', str(out_dir), *flags]) == 0
        return pd.read_csv(out_dir / config.COLLISIONS_FILENAME)

    def test_single_id(self, tmp_path):
        frame = self.run(tmp_path, "one", '--num-ids', '1', '--buckets', '10,100')
        assert frame['empirical_rate'].tolist() == [0.0, 0.0]
        assert frame['expected_rate'].tolist() == [0.0, 0.0]

    def test_double_never_exceeds_single(self, tmp_path):
        flags = ['--num-ids', '3000', '--buckets', '1000,2000,4000', '--seed', '5']
        single = self.run(tmp_path, "single", *flags)
        double = self.run(tmp_path, "double", *flags, '--double')
        assert list(single.columns) == ['buckets', 'mode', 'num_ids', 'empirical_rate', 'expected_rate']
        assert (double['empirical_rate'] <= single['empirical_rate']).all()
        assert double['mode'].tolist() == ['double'] * 3

    def test_ids_file_is_deduplicated(self, tmp_path):
        ids = tmp_path / "ids.txt"
        ids.write_text("a\nb\na\n\nc\n")
        frame = self.run(tmp_path, "file", '--ids-file', str(ids), '--buckets', '1')
        assert frame['num_ids'].tolist() == [3]
        assert frame['empirical_rate'].tolist() == [1.0]

    def test_num_ids_and_file_are_exclusive(self, tmp_path):
        code = app.main(['collisions', '--num-ids', '5', '--ids-file', 'x.txt'])
        assert code == config.EXIT_CODES['usage']

    def test_decreasing_buckets_rejected(self, tmp_path):
        code = app.main(['collisions', '--num-ids', '10', '--buckets', '100,50',
                         '--output-dir', str(tmp_path / "c")])
        assert code == config.EXIT_CODES['usage']
