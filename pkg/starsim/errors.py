from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from starsim.models.geometry import LineId
    from starsim.schemas.recovery import RecoveryReport


class StarError(Exception):
    """
    Base error for the simulator.

    Every subclass carries the process exit code the CLI returns for it,
    the way an HTTP error carries its status code.
    """

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(StarError):
    exit_code = 2


class TraceParseError(StarError):
    exit_code = 2

    def __init__(self, detail: str, line_no: int):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no


class ReportError(StarError):
    exit_code = 2


class IntegrityViolation(StarError):
    """A line fetched from NVM failed MAC verification."""

    exit_code = 3

    def __init__(self, detail: str, line: LineId):
        super().__init__(detail)
        self.line = line


class RecoveryFailure(StarError):
    exit_code = 4

    def __init__(self, detail: str, report: RecoveryReport | None = None):
        super().__init__(detail)
        self.report = report


class InvariantViolation(StarError):
    """Raised by shadow validation when live state disagrees with a rebuild."""

    exit_code = 1

    def __init__(self, detail: str, context: Any = None):
        super().__init__(detail)
        self.context = context
