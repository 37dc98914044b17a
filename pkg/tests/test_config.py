import json
import logging
import os
import tempfile
import unittest
from unittest.mock import patch

from lumino.stream_cert.config import (
    load_environment, output_dir_from_env, read_config_file, resolve_experiment_config, setup_cli_logging,
    workers_from_env
)
from lumino.stream_cert.constants import (
    DEFAULT_OUTPUT_DIR, ENV_VAR_CONFIG, ENV_VAR_LOG_LEVEL, ENV_VAR_OUTPUT_DIR, ENV_VAR_WORKERS, LOG_FILE_NAME
)
from lumino.stream_cert.error_handler import DomainError, ParseError


class TestConfig(unittest.TestCase):
    """Test config files and environment variable handling"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.config_file = os.path.join(self.temp_dir.name, 'config.json')

    def tearDown(self):
        self.temp_dir.cleanup()

    def write_config(self, data):
        with open(self.config_file, 'w') as f:
            f.write(data if isinstance(data, str) else json.dumps(data))

    @patch.dict('os.environ', {}, clear=True)
    def test_environment_defaults(self):
        """Test defaults when no variables are set"""
        self.assertEqual(output_dir_from_env(), DEFAULT_OUTPUT_DIR)
        self.assertEqual(workers_from_env(), 1)
        config = resolve_experiment_config()
        self.assertEqual(config.output_dir, DEFAULT_OUTPUT_DIR)
        self.assertEqual(config.workers, 1)

    def test_invalid_workers(self):
        """Test a non-integer worker count is a domain error"""
        with patch.dict('os.environ', {ENV_VAR_WORKERS: 'many'}):
            with self.assertRaises(DomainError):
                workers_from_env()

    def test_layering(self):
        """Test environment < config file < explicit overrides"""
        self.write_config({'tag': 'file', 'seed': 4, 'output_dir': '/from/file'})
        env = {ENV_VAR_OUTPUT_DIR: '/from/env', ENV_VAR_WORKERS: '3', ENV_VAR_CONFIG: self.config_file}
        with patch.dict('os.environ', env, clear=True):
            config = resolve_experiment_config({'seed': 9, 'w': None})
        self.assertEqual(config.tag, 'file')
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.w, 2)
        self.assertEqual(config.output_dir, '/from/file')
        self.assertEqual(config.workers, 3)

    @patch.dict('os.environ', {}, clear=True)
    def test_explicit_config_path(self):
        """Test an explicit path is read instead of SC_CONFIG"""
        self.write_config({'eps_grid': [0, 0.5]})
        config = resolve_experiment_config(config_path=self.config_file)
        self.assertEqual(config.eps_grid, (0.0, 0.5))

    def test_read_config_errors(self):
        """Test invalid JSON and non-object files raise ParseError"""
        self.write_config('{"tag": ')
        with self.assertRaises(ParseError) as context:
            read_config_file(self.config_file)
        self.assertEqual(context.exception.row, 1)

        self.write_config([1, 2])
        with self.assertRaises(ParseError):
            read_config_file(self.config_file)

        self.write_config({'sigma': -1.0})
        with self.assertRaises(DomainError):
            resolve_experiment_config(config_path=self.config_file)

    def test_load_environment(self):
        """Test the local .env file is loaded, then the user one"""
        with patch('lumino.stream_cert.config.load_dotenv') as mock_load_dotenv:
            load_environment()
        self.assertEqual(mock_load_dotenv.call_count, 2)
        self.assertEqual(mock_load_dotenv.call_args_list[0].args[0], './.env')
        self.assertTrue(mock_load_dotenv.call_args_list[1].args[0].endswith('.lumino/.env'))

    def test_setup_cli_logging(self):
        """Test the CLI logger writes into the output directory at the configured level"""
        with patch.dict('os.environ', {ENV_VAR_LOG_LEVEL: 'DEBUG'}), \
                patch('lumino.stream_cert.config.setup_logging') as mock_setup:
            setup_cli_logging(os.path.join(self.temp_dir.name, 'out'))
        name, path, level = mock_setup.call_args.args
        self.assertEqual(name, 'StreamCert')
        self.assertEqual(path.name, LOG_FILE_NAME)
        self.assertEqual(level, logging.DEBUG)
        self.assertTrue(os.path.isdir(os.path.join(self.temp_dir.name, 'out')))


if __name__ == '__main__':
    unittest.main()
