"""Exception hierarchy shared by the core and the command-line layer."""

from typing import Sequence


class CaptioningError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CaptioningError):
    """An op received operands whose shapes do not conform."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: shape mismatch {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TapeError(CaptioningError):
    pass


class MissingGradientError(CaptioningError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter '{name}' has no gradient")


class ParameterError(CaptioningError):
    pass


class DistributionError(CaptioningError):
    pass


class TokenError(CaptioningError):
    pass


class FormatError(CaptioningError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class NonFiniteLossError(CaptioningError):
    def __init__(self, video_id: str, value: float):
        self.video_id = video_id
        self.value = value
        super().__init__(f"non-finite loss {value!r} on sample '{video_id}'")


class MetricError(CaptioningError):
    pass


class ValidationError(CaptioningError):
    """Command-line flags or config values failed validation (exit code 2)."""


class NumericalError(CaptioningError):
    """A forward op produced or received NaN/Inf values."""
