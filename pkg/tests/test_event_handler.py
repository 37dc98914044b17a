import logging
import unittest
from unittest.mock import MagicMock

import numpy as np

from lumino.stream_cert.event_handler import EventHandler


class TestEventHandler(unittest.TestCase):
    """Tests for event_handler.py event recording and logging"""

    def setUp(self):
        """Set up test environment before each test"""
        self.mock_logger = MagicMock(spec=logging.Logger)
        self.event_handler = EventHandler(self.mock_logger)

    def test_event_handler_initialization(self):
        """Test that EventHandler starts empty with all components declared"""
        self.assertEqual(self.event_handler.events, [])
        for component in ('training', 'evaluation', 'certificate', 'attack', 'oracle'):
            self.assertIn(component, self.event_handler.component_events)
        self.assertIn('TraceAudited', self.event_handler.component_events['attack'])

    def test_emit_records_and_logs(self):
        """Test emitting an event records it and logs a formatted message"""
        self.event_handler.emit('CertificateComputed', eps=0.5, bound=np.float64(0.123456789),
                                certified_lower=0.7)

        self.assertEqual(self.event_handler.count('CertificateComputed'), 1)
        name, args = self.event_handler.events[0]
        self.assertEqual(name, 'CertificateComputed')
        self.assertEqual(args['eps'], 0.5)

        level, message = self.mock_logger.log.call_args.args
        self.assertEqual(level, logging.INFO)
        self.assertIn("Event CertificateComputed emitted:", message)
        self.assertIn("bound: 0.123457", message)

    def test_arrays_are_summarized(self):
        """Test array arguments are logged by shape"""
        self.event_handler.emit('SmoothedEvaluationCompleted', per_step=np.zeros((4, 2)))
        _, message = self.mock_logger.log.call_args.args
        self.assertIn("per_step: array(shape=(4, 2))", message)

    def test_perturbations_log_at_debug(self):
        """Test per-step attack events are logged at DEBUG"""
        self.event_handler.emit('PerturbationAccepted', step=3, radius=0.5, distance=0.5)
        level, _ = self.mock_logger.log.call_args.args
        self.assertEqual(level, logging.DEBUG)

    def test_unknown_event(self):
        """Test emitting an undeclared event raises KeyError"""
        with self.assertRaises(KeyError):
            self.event_handler.emit('NodeRegistered')
        self.assertEqual(self.event_handler.events, [])


if __name__ == '__main__':
    unittest.main()
