"""Exception hierarchy."""


class AIFError(Exception):
    """Base class for all errors raised by :mod:`aifreset`."""


class InvalidParameterError(AIFError, ValueError):
    pass


class InvalidStateError(AIFError, ValueError):
    pass


class NumericalError(AIFError, ArithmeticError):
    """A solver failed to converge or produced non-finite values."""


class FlowOverflowError(NumericalError):
    pass


class ItineraryError(NumericalError):
    """A trajectory left the itinerary prescribed for it.

    ``segment`` is the zero-based index of the offending flow segment and
    ``reason`` a short description of what happened there.
    """

    def __init__(self, segment: int, reason: str, w0: float | None = None):
        self.segment = segment
        self.reason = reason
        self.w0 = w0
        msg = f"itinerary broken at segment {segment}: {reason}"
        if w0 is not None:
            msg += f" (w0={w0!r})"
        super().__init__(msg)


class GrazingError(NumericalError):
    """An event surface is hit tangentially, so its saltation matrix is singular."""


class ConvergenceError(NumericalError):
    pass
