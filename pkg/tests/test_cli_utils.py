import unittest
from unittest.mock import patch

from lumino.stream_cert.cli_utils import CLIUtils
from lumino.stream_cert.error_handler import DomainError
from lumino.stream_cert.oracle import CheckResult


class TestCLIUtils(unittest.TestCase):
    """Tests for cli_utils.py CLI utility functions"""

    def test_parse_grid_list(self):
        """Test comma-separated grids"""
        self.assertEqual(CLIUtils.parse_grid("0, 0.25,0.5"), [0.0, 0.25, 0.5])
        self.assertEqual(CLIUtils.parse_grid("1,2,4", int), [1, 2, 4])
        self.assertIsNone(CLIUtils.parse_grid(None))

    def test_parse_grid_range(self):
        """Test start:stop:count grids include both ends"""
        self.assertEqual(CLIUtils.parse_grid("0:1:5"), [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual(CLIUtils.parse_grid("2:2:2"), [2.0, 2.0])

    def test_parse_grid_errors(self):
        """Test malformed grids raise DomainError"""
        for text in ("a,b", "0:1", "0:1:1", "0:1:x"):
            with self.assertRaises(DomainError, msg=text):
                CLIUtils.parse_grid(text)

    def test_echo_table(self):
        """Test table rendering of floats, NaN and labels"""
        with patch('click.echo') as mock_echo:
            CLIUtils.echo_table(['eps', 'value', 'label'], [[0.5, float('nan'), 'sigma=1']])
        header, line = [call.args[0] for call in mock_echo.call_args_list]
        self.assertEqual(header.split(), ['eps', 'value', 'label'])
        self.assertEqual(line.split(), ['0.500000', 'nan', 'sigma=1'])
        self.assertEqual(len(header), len(line))

    def test_echo_checks(self):
        """Test PASS/FAIL lines and the overall verdict"""
        failed = CheckResult('psi_vs_tv', checked=4, failures=1, worst=0.01)
        with patch('click.echo') as mock_echo:
            self.assertTrue(CLIUtils.echo_checks([CheckResult('special_functions', checked=10)]))
            self.assertFalse(CLIUtils.echo_checks([CheckResult('special_functions', checked=10), failed]))
        lines = [call.args[0] for call in mock_echo.call_args_list]
        self.assertTrue(lines[0].startswith("PASS  special_functions: 10 checked"))
        self.assertTrue(lines[-1].startswith("FAIL  psi_vs_tv: 4 checked, 1 failed"))


if __name__ == '__main__':
    unittest.main()
