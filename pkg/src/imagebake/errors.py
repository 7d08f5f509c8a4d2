"""Exception hierarchy shared by every imagebake module."""

from __future__ import annotations


class ImagebakeError(Exception):
    """Base class for all domain errors. The CLI maps these to exit code 2."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None and column is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)


# --- dump parsing / data model ---------------------------------------------

class InvalidDump(ImagebakeError):
    """A dump document could not be turned into a Snapshot."""


class DumpSyntaxError(InvalidDump):
    def __init__(self, message: str, *, line: int, column: int, expected: str | None = None):
        self.expected = expected
        super().__init__(message, line=line, column=column)


class SchemaError(InvalidDump):
    """Table schema violates column rules (names, single primary key)."""


class DuplicateTable(InvalidDump):
    pass


class UnknownTable(ImagebakeError):
    pass


class UnknownColumn(ImagebakeError):
    pass


class TypeMismatch(ImagebakeError):
    pass


class DuplicateKey(ImagebakeError):
    pass


# --- master -------------------------------------------------------------------

class InvalidWrite(ImagebakeError):
    pass


class OutOfOrderWrite(ImagebakeError):
    pass


class StorageError(ImagebakeError):
    pass


class AlreadyScheduled(ImagebakeError):
    pass


# --- bakery -------------------------------------------------------------------

class DigestMismatch(ImagebakeError):
    pass


class MissingLayer(ImagebakeError):
    pass


class InvalidConfig(ImagebakeError):
    pass


# --- runtime ------------------------------------------------------------------

class ImageVerificationFailed(ImagebakeError):
    pass


class NotReady(ImagebakeError):
    pass


class AlreadyTerminated(ImagebakeError):
    pass


# --- gateway ------------------------------------------------------------------

class NoReplicasAvailable(ImagebakeError):
    pass


class WriteRejected(ImagebakeError):
    pass


class UnknownTicket(ImagebakeError):
    pass


class WrongMode(ImagebakeError):
    pass


# --- rollout ------------------------------------------------------------------

class InfeasibleStrategy(ImagebakeError):
    pass


class LaunchFailed(ImagebakeError):
    pass


class RolloutInProgress(ImagebakeError):
    pass


# --- simulator ----------------------------------------------------------------

class ConfigInvalid(ImagebakeError):
    pass
