"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SegEveryError(ValueError):
    """Base class for all structured errors raised by the package."""


class MalformedRleError(SegEveryError):
    pass


class DimensionMismatchError(SegEveryError):
    pass


class PolygonError(SegEveryError):
    pass


class SceneGenerationError(SegEveryError):
    pass


class PromptOutOfBoundsError(SegEveryError):
    def __init__(self, index: int, message: str):
        super().__init__(f"prompt {index}: {message}")
        self.index = index


class AlignmentError(SegEveryError):
    """Run records and ground truth do not cover the same image ids."""


class FormatError(SegEveryError):
    """A file could not be parsed; ``location`` says where."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class VersionMismatchError(FormatError):
    def __init__(self, expected: object, found: object, location: str | None = None):
        super().__init__(f"version mismatch: expected {expected!r}, found {found!r}", location)
        self.expected = expected
        self.found = found


class ConfigError(SegEveryError):
    pass
