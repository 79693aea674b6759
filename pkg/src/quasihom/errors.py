"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Bad input: wrong shape, non-finite value, violated precondition."""


class ResolutionError(InvalidArgumentError):
    """The mesh is too coarse for the requested scale."""


class RangeError(ValueError):
    """A query fell outside a tabulated box."""


class DegenerateRegionError(ValueError):
    """A region selection contains no triangles."""


class NumericalBreakdownError(RuntimeError):
    """An inner linear solve failed."""


class NonConvergenceError(RuntimeError):
    """An outer iteration ran out of iterations.

    The partial :class:`~quasihom.solver.SolveReport` is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
