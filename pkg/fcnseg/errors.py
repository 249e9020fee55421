from __future__ import annotations


class FcnsegError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeError(FcnsegError, ValueError):
    pass


class DegenerateBatchError(ShapeError):
    pass


class ConfigurationError(FcnsegError, ValueError):
    pass


class BoundsError(FcnsegError, IndexError):
    pass


class StateError(FcnsegError, RuntimeError):
    pass


class DataError(FcnsegError, ValueError):
    """Bad or missing input data; ``subject`` names the sample or glyph."""

    def __init__(self, message: str, subject: str | int | None = None) -> None:
        super().__init__(message)
        self.subject = subject


class FormatError(FcnsegError, ValueError):
    """Malformed binary or text file; ``offset`` is the byte (or line) position."""

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
