"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SemvadError(Exception):
    """Base class for all package errors."""


class ConfigError(SemvadError, ValueError):
    """Invalid configuration or input format.

    ``field`` names the offending setting when one can be identified.
    """

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class DegenerateInputError(SemvadError, ValueError):
    """Input too short for the requested transform."""


class NumericError(SemvadError, FloatingPointError):
    """Non-finite values appeared during a forward pass."""

    def __init__(self, message: str, parameter: str | None = None) -> None:
        super().__init__(message)
        self.parameter = parameter


class CheckpointError(SemvadError, ValueError):
    """Malformed checkpoint payload; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(CheckpointError):
    """CRC32 trailer does not match the payload."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint format version is not understood by this build."""


class ProtocolError(SemvadError):
    """A session received a message that is illegal in its current state."""


class TrainingDiverged(SemvadError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the last parameters that produced a finite loss.
    """

    def __init__(self, message: str, checkpoint: object = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint
