from typing import Optional

import click
from lumino.stream_cert.constants import EXIT_FAILURE, EXIT_USAGE


class StreamCertError(Exception):
    """Base exception for the stream certification toolkit"""
    pass


class DomainError(StreamCertError, ValueError):
    """Exception for inputs outside an operation's domain"""
    pass


class ParseError(StreamCertError):
    """Exception for malformed stream, config or parameter files"""

    def __init__(self, message: str, row: Optional[int] = None, path: Optional[str] = None):
        self.row = row
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if row is not None:
            location += f"{':' if location else ''}row {row}"
        super().__init__(f"{location}: {message}" if location else message)


class UnsupportedOperationError(StreamCertError):
    """Exception for operations a smoothing kind or spec cannot perform"""
    pass


class SizeError(StreamCertError):
    """Exception for enumerations that are too large to run exactly"""
    pass


class ValidationError(StreamCertError):
    """Exception for malformed or non-compliant attack traces"""
    pass


class TrainingError(StreamCertError):
    """Exception for diverging training runs"""
    pass


class AcceptanceError(StreamCertError):
    """Exception for simulated runs that violate a checked invariant"""
    pass


class ErrorHandler:
    """Maps toolkit exceptions to CLI messages and exit codes"""

    def __init__(self):
        # Error definitions with their exit codes and formatters
        self.error_defs = {
            "DomainError": {
                "exit_code": EXIT_USAGE,
                "format": lambda e: f"Invalid input: {e}"
            },
            "ParseError": {
                "exit_code": EXIT_USAGE,
                "format": lambda e: f"Could not parse {e}"
            },
            "UnsupportedOperationError": {
                "exit_code": EXIT_USAGE,
                "format": lambda e: f"Unsupported operation: {e}"
            },
            "SizeError": {
                "exit_code": EXIT_USAGE,
                "format": lambda e: f"Instance too large: {e}"
            },
            "UsageError": {
                "exit_code": EXIT_USAGE,
                "format": lambda e: f"Usage error: {e.format_message()}"
            },
            "ValidationError": {
                "exit_code": EXIT_FAILURE,
                "format": lambda e: f"Validation failed: {e}"
            },
            "AcceptanceError": {
                "exit_code": EXIT_FAILURE,
                "format": lambda e: f"Acceptance check failed: {e}"
            },
            "TrainingError": {
                "exit_code": EXIT_FAILURE,
                "format": lambda e: f"Training aborted: {e}"
            },
            "OSError": {
                "exit_code": EXIT_FAILURE,
                "format": lambda e: f"I/O error on {getattr(e, 'filename', None) or 'unknown path'}: "
                                    f"{getattr(e, 'strerror', None) or e}"
            },
        }

    def _lookup(self, error: BaseException) -> Optional[dict]:
        # Walk the MRO so subclasses (e.g. FileNotFoundError) resolve to their parent entry
        for cls in type(error).__mro__:
            if cls.__name__ in self.error_defs:
                return self.error_defs[cls.__name__]
        return None

    def describe(self, error: BaseException) -> str:
        """
        Formats an exception into a human-readable message

        Args:
            error: The exception raised by a command

        Returns:
            A human-readable error message
        """
        error_def = self._lookup(error)
        if error_def is None:
            return f"Unexpected error: {error!r}"
        try:
            return error_def["format"](error)
        except Exception as e:
            return f"{error} (formatter error: {e})"

    def exit_code(self, error: BaseException) -> int:
        """
        Returns the process exit code for an exception

        Args:
            error: The exception raised by a command

        Returns:
            2 for usage-type errors, 1 for everything else
        """
        if isinstance(error, click.UsageError):
            return EXIT_USAGE
        error_def = self._lookup(error)
        return error_def["exit_code"] if error_def else EXIT_FAILURE
