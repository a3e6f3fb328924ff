from typing import Any, Dict, Optional


class FlapguardError(Exception):
    """
    Base class of all errors raised by flapguard.

    Every error carries a stable machine-readable ``code`` and an optional
    ``details`` mapping, which the command line front end serializes
    to JSON on stderr.
    """
    code = 'flapguard_error'

    def __init__(self,
                 message: str,
                 details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': self.code,
            'message': self.message,
            'details': self.details,
        }


class MalformedRecord(FlapguardError):
    """
    Error raised when an input row cannot be parsed into a record.

    For example when a mandatory field is missing, the timestamp
    is not RFC 3339 / epoch seconds, or the count is negative.
    """
    code = 'malformed_record'

    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f'Malformed record at line {line}: {reason}',
                         {'line': line, 'reason': reason})
        self.line = line
        self.reason = reason


class EmptyWindow(FlapguardError):
    """
    Error raised when an aggregation window is empty,
    ie its start is not strictly before its end.
    """
    code = 'empty_window'


class InsufficientHistory(FlapguardError):
    """
    Error raised when an hourly series is too short to compute
    a week-over-week buffer or the bounds of a target week.
    """
    code = 'insufficient_history'


class WindowMismatch(FlapguardError):
    """
    Error raised when observations and thresholds cover different weeks.
    """
    code = 'window_mismatch'


class RaggedInput(FlapguardError):
    """
    Error raised when per-node weekly sequences differ in length.
    """
    code = 'ragged_input'


class UnknownNode(FlapguardError):
    """
    Error raised when an observation refers to a node that has no
    thresholds and the unknown node policy is 'error'.
    """
    code = 'unknown_node'


class SchemaMismatch(FlapguardError):
    """
    Error raised when an artifact has an unexpected schema version or kind.
    """
    code = 'schema_mismatch'


class MissingInput(FlapguardError):
    """
    Error raised when an input artifact of a pipeline stage does not exist.
    """
    code = 'missing_input'


class ConfigError(FlapguardError):
    """
    Error raised when configuration values violate their constraints.
    """
    code = 'config_error'
