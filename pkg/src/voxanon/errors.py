"""Exception hierarchy shared by every module."""
from __future__ import annotations


class VoxAnonError(Exception):
    """Base class for all errors raised by voxanon."""


class FormatError(VoxAnonError, ValueError):
    """A file is structurally malformed (bad magic, header, field count)."""


class SchemaError(VoxAnonError, ValueError):
    """Input has the wrong type, rank, dtype, dimension or label vocabulary."""


class DataError(VoxAnonError, ValueError):
    """Input values violate an invariant (non-finite, zero norm, duplicates)."""


class CapacityError(VoxAnonError, ValueError):
    """Not enough rows for the request (e.g. k larger than the matching set)."""


class DomainError(VoxAnonError, ValueError):
    """A scalar argument is outside its mathematical domain."""


class IoError(VoxAnonError, OSError):
    """Reading or writing a file failed at the OS level."""


class MissingOutputError(VoxAnonError, FileNotFoundError):
    """An anonymization backend has no output for an assigned utterance."""

    def __init__(self, utterance_id: str, backend_id: str, directory: str):
        self.utterance_id = utterance_id
        self.backend_id = backend_id
        self.directory = directory
        super().__init__(
            f"backend {backend_id!r} has no output for utterance "
            f"{utterance_id!r} in {directory}"
        )
