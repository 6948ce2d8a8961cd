"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""

from __future__ import annotations


class WebcatError(Exception):
    exit_code = 2


class InvalidUrl(WebcatError, ValueError):
    pass


class ParseError(WebcatError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownCategory(WebcatError, ValueError):
    pass


class EmptyWindow(WebcatError, ValueError):
    pass


class TargetTooSmall(WebcatError, ValueError):
    pass


class ShapeMismatch(WebcatError, ValueError):
    pass


class NotScalarLoss(WebcatError, ValueError):
    pass


class SequenceTooLong(WebcatError, ValueError):
    pass


class EmptyDataset(WebcatError, ValueError):
    pass


class CorruptCheckpoint(WebcatError, ValueError):
    pass


class InsufficientPool(WebcatError, ValueError):
    def __init__(self, pool: str, required: int, available: int):
        self.pool = pool
        self.required = required
        self.available = available
        super().__init__(f"{pool} pool has {available} records, {required} required")


class LengthMismatch(WebcatError, ValueError):
    pass


class EmptyInput(WebcatError, ValueError):
    pass


class TeacherUnavailable(WebcatError, RuntimeError):
    exit_code = 3


class PartialResult(WebcatError, RuntimeError):
    """Labeling stopped early; ``completed`` holds the finished prefix."""

    exit_code = 3

    def __init__(self, completed, cause: BaseException):
        self.completed = completed
        self.cause = cause
        super().__init__(f"labeling interrupted after {len(completed.entries)} records: {cause}")
