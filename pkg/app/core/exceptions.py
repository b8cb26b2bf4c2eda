"""Exception hierarchy shared by the engine and the CLI.

Every error carries the process exit code the CLI reports for it and can render
itself as a single machine-readable line.
"""
from typing import Optional


class BanditError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 3
    kind: str = "BanditError"

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.field = field

    def to_line(self) -> str:
        """Render as ``error=<kind> field=<field> message=<message>``."""
        field = self.field or "-"
        message = self.message.replace("\n", "; ")
        return f"error={self.kind} field={field} message={message}"


class ConfigError(BanditError):
    """Invalid configuration value (non-positive p or lambda, odd width, q <= 1, ...)."""

    exit_code = 1
    kind = "ConfigError"


class InputError(BanditError):
    """Invalid input data: shape mismatch, non-unit contexts, unreadable datasets."""

    exit_code = 1
    kind = "InputError"


class UsageError(BanditError):
    """Command-line misuse."""

    exit_code = 2
    kind = "UsageError"


class NumericalError(BanditError):
    """Non-finite values or matrices that violate positive semi-definiteness."""

    exit_code = 3
    kind = "NumericalError"


class RunAbortedError(NumericalError):
    """A single bandit run could not continue (e.g. training diverged)."""

    kind = "RunAborted"

    def __init__(self, message: str, round_index: Optional[int] = None):
        super().__init__(message)
        self.round_index = round_index
