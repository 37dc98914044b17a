import json
import logging
import os
import tempfile
import unittest
from unittest.mock import MagicMock, patch

import numpy as np
from click.testing import CliRunner

from lumino.stream_cert.adversary import AttackConfig, AttackTarget, emit_trace, greedy_once_attack
from lumino.stream_cert.cli import cli
from lumino.stream_cert.model import Architecture, ModelParams, save_model
from lumino.stream_cert.oracle import CheckResult
from lumino.stream_cert.stream import LabeledStream, load_csv_stream
from lumino.stream_cert.utils import load_json_file, save_json_file


def threshold_model():
    return ModelParams(Architecture.LINEAR, 1, 1, 2, {'W': np.array([[-1.0], [1.0]]), 'b': np.zeros(2)})


class TestCLI(unittest.TestCase):
    """Tests for the lumino-cert command group"""

    def setUp(self):
        self.runner = CliRunner()
        self.temp_dir = tempfile.TemporaryDirectory()
        self.logging_patch = patch('lumino.stream_cert.cli.setup_cli_logging',
                                   return_value=MagicMock(spec=logging.Logger))
        self.logging_patch.start()

    def tearDown(self):
        self.logging_patch.stop()
        self.temp_dir.cleanup()

    def path(self, name):
        return os.path.join(self.temp_dir.name, name)

    def tiny_args(self, tag='cli'):
        return ['--output-dir', self.temp_dir.name, '--tag', tag, '--length', '30', '--train-length', '60',
                '--epochs', '2', '--mc-reps', '3', '--eps-grid', '0,0.5', '--architecture', 'linear']

    def test_gen_writes_stream(self):
        """Test gen writes a loadable synthetic stream"""
        result = self.runner.invoke(cli, ['gen', '--out', self.path('s.csv'), '--length', '50', '--seed', '2'])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("Wrote 50 items", result.output)
        self.assertEqual(load_csv_stream(self.path('s.csv')).length, 50)

    def test_domain_error_exits_with_usage_code(self):
        """Test invalid generator values are reported with exit code 2"""
        result = self.runner.invoke(cli, ['gen', '--out', self.path('s.csv'), '--num-classes', '1'])
        self.assertEqual(result.exit_code, 2)
        self.assertIn("Error:", result.output)

    def test_compare_table_and_csv(self):
        """Test compare prints one column per p and writes the CSV"""
        result = self.runner.invoke(cli, ['compare', '--p-grid', '0.75,0.9', '--eps-grid', '0:1:5',
                                          '--out', self.path('compare.csv')])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("p=0.9", result.output)
        self.assertTrue(os.path.exists(self.path('compare.csv')))

    def test_compare_bad_grid(self):
        """Test an unparsable grid is a usage error"""
        result = self.runner.invoke(cli, ['compare', '--p-grid', 'a,b'])
        self.assertEqual(result.exit_code, 2)

    @patch('lumino.stream_cert.cli.run_oracle_suite')
    def test_verify_success(self, mock_suite):
        """Test verify reports passing checks"""
        mock_suite.return_value = [CheckResult('special_functions', checked=10)]
        result = self.runner.invoke(cli, ['verify', '--instances', '5', '--output-dir', self.temp_dir.name])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("All oracle checks passed", result.output)
        self.assertEqual(mock_suite.call_args.kwargs['instances'], 5)

    @patch('lumino.stream_cert.cli.run_oracle_suite')
    def test_verify_failure_dumps_counterexamples(self, mock_suite):
        """Test verify exits 1 and writes counterexamples when a check fails"""
        failed = CheckResult('psi_vs_tv', checked=3)
        failed.fail({'sigma': 1.0, 'd': 0.5})
        mock_suite.return_value = [CheckResult('special_functions', checked=10), failed]
        result = self.runner.invoke(cli, ['verify', '--output-dir', self.temp_dir.name])
        self.assertEqual(result.exit_code, 1)
        self.assertIn("FAIL  psi_vs_tv", result.output)
        dumped = load_json_file(self.path('verify_counterexamples.json'))
        self.assertEqual(dumped, {'psi_vs_tv': [{'sigma': 1.0, 'd': 0.5}]})

    def test_certify_writes_results(self):
        """Test certify runs end to end on a tiny synthetic stream"""
        result = self.runner.invoke(cli, ['certify'] + self.tiny_args())
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("Results for 'cli_certify'", result.output)
        self.assertTrue(os.path.exists(self.path('results_cli_certify.csv')))
        self.assertTrue(os.path.exists(self.path('manifest_cli_certify.json')))

    def test_config_file_and_overrides(self):
        """Test values from --config are used and command-line values win"""
        save_json_file(self.path('config.json'), {'tag': 'fromfile', 'mc_reps': 2, 'w': 1})
        result = self.runner.invoke(cli, ['certify', '--config', self.path('config.json')] + self.tiny_args()[:2]
                                    + ['--length', '20', '--train-length', '40', '--epochs', '1',
                                       '--architecture', 'linear', '--w', '2'])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        manifest = load_json_file(self.path('manifest_fromfile_certify.json'))
        self.assertEqual(manifest['config']['mc_reps'], 2)
        self.assertEqual(manifest['config']['w'], 2)

    def test_unknown_config_key(self):
        """Test an unknown config key is a parse error"""
        with open(self.path('config.json'), 'w') as f:
            json.dump({'windw': 3}, f)
        result = self.runner.invoke(cli, ['certify', '--config', self.path('config.json')])
        self.assertEqual(result.exit_code, 2)
        self.assertIn("windw", result.output)

    def test_train_saves_model(self):
        """Test train saves a model with the configured window size"""
        result = self.runner.invoke(cli, ['train', '--out', self.path('model.json'), '--w', '3']
                                    + self.tiny_args()[4:])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("Saved linear model (w=3)", result.output)
        self.assertTrue(os.path.exists(self.path('model.json')))

    def test_audit_and_replay(self):
        """Test audit accepts a compliant trace and replays it"""
        stream = LabeledStream(np.full((6, 1), 0.5), np.ones(6, dtype=np.int64), 2)
        trace = greedy_once_attack(stream, AttackTarget(threshold_model()), 1, AttackConfig(epsilon=0.3))
        emit_trace(trace, self.path('trace'))
        save_model(threshold_model(), self.path('model.json'))

        result = self.runner.invoke(cli, ['audit', '--trace-dir', self.path('trace'),
                                          '--model-path', self.path('model.json')])
        self.assertEqual(result.exit_code, 0, msg=result.output)
        self.assertIn("Replay matches recorded outcomes", result.output)
        self.assertIn("Trace is budget compliant", result.output)

    def test_audit_rejects_overspent_trace(self):
        """Test audit exits 1 when the recorded budget is exceeded"""
        stream = LabeledStream(np.full((6, 1), 0.5), np.ones(6, dtype=np.int64), 2)
        trace = greedy_once_attack(stream, AttackTarget(threshold_model()), 1, AttackConfig(epsilon=0.3))
        emit_trace(trace, self.path('trace'))
        meta = load_json_file(self.path('trace/trace.json'))
        meta['epsilon'] = 0.05
        save_json_file(self.path('trace/trace.json'), meta)

        result = self.runner.invoke(cli, ['audit', '--trace-dir', self.path('trace')])
        self.assertEqual(result.exit_code, 1)
        self.assertIn("exceeds its budget", result.output)


if __name__ == '__main__':
    unittest.main()
