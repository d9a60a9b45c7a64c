"""Exception and warning types raised across the package."""

from __future__ import annotations


class PosatError(Exception):
    """Base class for all errors raised by :mod:`posat`."""


class InvalidInstance(PosatError, ValueError):
    pass


class PathNotConnected(PosatError, ValueError):
    pass


class NegativeKappa(PosatError, ValueError):
    pass


class NegativeDegree(PosatError, ValueError):
    pass


class NonpositiveDemand(PosatError, ValueError):
    pass


class NotSeparable(PosatError, ValueError):
    """The operation needs a separable (or at least integrable) cost."""


class LambdaOutOfRange(PosatError, ValueError):
    pass


class NegativeArcTime(PosatError, ValueError):
    pass


class DisconnectedOD(PosatError):
    def __init__(self, od: int, origin, dest):
        super().__init__(f"OD {od} ({origin} -> {dest}) is not connected")
        self.od = od
        self.origin = origin
        self.dest = dest


class MultipleOrigins(PosatError, ValueError):
    pass


class NoIntegerRatio(PosatError, ValueError):
    pass


class UnknownNode(PosatError, KeyError):
    pass


class ParseError(PosatError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class UnsupportedPower(ParseError):
    pass


class PRUEFailed(PosatError, RuntimeError):
    pass


class CyclicResidual(UserWarning):
    """Flow left on cycles after path extraction; it is dropped."""


class MaxItersExceeded(RuntimeWarning):
    """A solver stopped at its iteration cap; the report carries converged=False."""
