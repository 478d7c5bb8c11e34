"""Exception hierarchy shared by the score, model and harness layers."""


class AccompanistError(Exception):
    """Base class for all errors raised by this package."""


class EmptyScore(AccompanistError, ValueError):
    """A score (or quantized score) has no events to model."""


class ParseError(AccompanistError, ValueError):
    """Malformed score input.

    ``offset`` is the byte offset into the input where the problem was
    detected, or ``None`` when the problem is not tied to a position.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormat(AccompanistError, ValueError):
    """Input is well formed but uses a feature this package does not read."""


class NumericalUnderflow(AccompanistError, ArithmeticError):
    """An observation has zero probability under every reachable state."""

    def __init__(self, t):
        super().__init__(f"observation at t={t} is impossible under the model")
        self.t = t


class OneHandEmpty(AccompanistError, ValueError):
    """A two-hand score has no units for one of the hands."""
