"""Exception types shared across the package.

Everything raised on purpose derives from :class:`PrototextError` so the
CLI can map failures to exit codes: configuration and usage problems,
data problems, and everything else.
"""

from __future__ import annotations


class PrototextError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PrototextError):
    """Bad command-line invocation (unknown flag, missing argument)."""


class InvalidConfig(PrototextError):
    """A configuration value violates its documented constraints."""


class DataError(PrototextError):
    """Base class for malformed or inconsistent input data."""


class InvalidTable(DataError):
    """A table is empty or contains a blank attribute or value."""


class ParseError(DataError):
    """A record in an input file could not be parsed.

    Carries the 1-based line number when the failure is tied to a line.
    """

    def __init__(self, message: str, line_no: int | None = None, path: str | None = None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"line {line_no}: "
        super().__init__(where + message)


class DuplicateId(DataError):
    """Two records in the same file share an id."""

    def __init__(self, dup_id: int, path: str | None = None):
        self.dup_id = dup_id
        where = f" in {path}" if path else ""
        super().__init__(f"duplicate id {dup_id}{where}")


class UnknownDocument(DataError):
    """A sentence id is not present in the index or corpus."""


class InsufficientNegatives(DataError):
    """An example has fewer candidates than the configured negative count."""


class InputTooLong(DataError):
    """A token sequence exceeds the model's maximum context length."""


class InvalidInput(DataError):
    """Operation inputs are structurally invalid (e.g. length mismatch)."""


class AllTies(DataError):
    """Sign test is undefined: every paired comparison is a tie."""


class StageError(PrototextError):
    """A pipeline stage failed; names the stage and keeps the cause chained."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
