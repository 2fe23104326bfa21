"""Exception and warning types raised across the package."""


class NotPositiveDefiniteError(ValueError):
    """A matrix expected to be SPD has an eigenvalue at or below the floor."""


class DimensionMismatchError(ValueError):
    pass


class DegenerateCombinationError(NotPositiveDefiniteError):
    """A conic combination of atoms is not numerically positive definite.

    ``index`` identifies the offending datum when raised from a batch
    evaluation, otherwise it is None.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateStartError(DegenerateCombinationError):
    pass


class QuadratureUnderResolvedError(RuntimeError):
    pass


class MatrixOverflowError(OverflowError):
    pass


class SolverError(RuntimeError):
    """Inner solver failure, tagged with the outer iteration it happened in."""

    def __init__(self, message, outer_iter=None):
        super().__init__(message)
        self.outer_iter = outer_iter


class ConvergenceWarning(UserWarning):
    pass
