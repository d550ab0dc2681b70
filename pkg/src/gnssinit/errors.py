"""Exception types raised across the package."""


class NotSkewSymmetric(ValueError):
    pass


class AntipodalPoints(ValueError):
    pass


class EmptyStream(ValueError):
    pass


class NonMonotonicTimestamps(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class SingularNormalEquations(RuntimeError):
    """LM damping grew past its ceiling without producing a usable step."""


class NonFiniteCost(RuntimeError):
    pass


class UnsupportedOrder(ValueError):
    pass


class InsufficientMeasurements(ValueError):
    pass


class NeverTriggered(RuntimeError):
    """The activation criterion did not fire before the stream ended."""


class LengthMismatch(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason
