import logging
from typing import Any, Dict, List, Tuple

import numpy as np


class EventHandler:
    """Handles experiment event formatting and logging"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.events: List[Tuple[str, Dict[str, Any]]] = []

        # Define component event mappings
        self.component_events = {
            'training': [
                'TrainingStarted',
                'EpochCompleted',
                'TrainingCompleted'
            ],
            'evaluation': [
                'SmoothedEvaluationCompleted'
            ],
            'certificate': [
                'CertificateComputed'
            ],
            'attack': [
                'AttackStarted',
                'PerturbationAccepted',
                'AttackCompleted',
                'TraceAudited'
            ],
            'oracle': [
                'OracleCheckCompleted'
            ]
        }
        self._known = {name for names in self.component_events.values() for name in names}

    def emit(self, event_name: str, **args: Any) -> None:
        """Record and log an event

        Args:
            event_name: One of the names declared in component_events
            **args: Event arguments
        """
        if event_name not in self._known:
            raise KeyError(f"Unknown event: {event_name}")
        self.events.append((event_name, dict(args)))
        self._log_event(event_name, args)

    def count(self, event_name: str) -> int:
        """Number of times an event was emitted"""
        return sum(1 for name, _ in self.events if name == event_name)

    @staticmethod
    def _format_value(value: Any) -> str:
        if isinstance(value, np.ndarray):
            return f"array(shape={value.shape})"
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.6g}"
        return str(value)

    def _log_event(self, event_name: str, args: Dict[str, Any]) -> None:
        """Format and log an event"""
        event_msg = f"Event {event_name} emitted:"
        for key, value in args.items():
            event_msg += f"\n    {key}: {self._format_value(value)}"

        # Per-step attack events are chatty
        level = logging.DEBUG if event_name == 'PerturbationAccepted' else logging.INFO
        self.logger.log(level, event_msg)
