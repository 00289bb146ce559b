"""Exception hierarchy."""


class StiefelError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(StiefelError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NotFullRankError(StiefelError, ArithmeticError):
    """A matrix that must have full column rank does not."""


class NotSymmetricError(StiefelError, ValueError):
    pass


class ConvergenceError(StiefelError, ArithmeticError):
    """An iterative kernel hit its iteration cap."""


class NotOnManifoldError(StiefelError, ValueError):
    """Input is too far from St(n, k) to be repaired."""


class NotTangentError(StiefelError, ValueError):
    pass


class LogMapError(StiefelError, ArithmeticError):
    """The Riemannian logarithm could not be computed.

    ``index`` holds the positions (in a batch) that failed, when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LogMapNoConvergence(LogMapError):
    pass


class CutLocusError(LogMapError):
    """The target point sits (numerically) on the cut locus of the base."""


class VarianceError(StiefelError, ValueError):
    """A variance is outside its admissible range."""


class UnreliableEstimateError(StiefelError, ArithmeticError):
    """Too many Monte Carlo samples were discarded.

    The partial result is available as ``estimate``.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class FilterStepError(StiefelError, ArithmeticError):
    """A filter update failed; ``step`` is the 0-based measurement index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
