"""Exception hierarchy. Each class carries a stable ``code`` used in reports."""


class TreememError(Exception):
    code = "TreememError"


class RootHasNoParent(TreememError):
    code = "RootHasNoParent"


class LeafHasNoChildren(TreememError):
    code = "LeafHasNoChildren"


class ParseError(TreememError):
    code = "ParseError"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class NonFiniteValue(TreememError):
    code = "NonFiniteValue"


class BetaZeroSeries(TreememError):
    code = "BetaZeroSeries"


class TailUnbounded(TreememError):
    code = "TailUnbounded"


class SingularPivot(TreememError):
    code = "SingularPivot"


class SeparationViolated(TreememError):
    code = "SeparationViolated"


class MaxIterExceeded(TreememError):
    """Raised when an iterative solver runs out of iterations.

    The last iterate and its residual are attached so callers can inspect
    how far the solve got.
    """

    code = "MaxIterExceeded"

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class MonotonicityViolated(TreememError):
    code = "MonotonicityViolated"


class ConfigError(TreememError):
    code = "ConfigError"
