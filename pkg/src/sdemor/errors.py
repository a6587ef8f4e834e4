"""Error classes shared across the package.

Each class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class SdemorError(Exception):
    """Base class for all package errors."""


class NearSingularProjection(SdemorError):
    """cond(W^T V) exceeds the configured threshold; the oblique projection
    would amplify noise beyond usefulness."""


class RankDeficient(SdemorError):
    """A matrix whose span is requested has numerical rank below the
    requested dimension."""


class NumericalFailure(SdemorError):
    """An eigenvalue solve failed or a propagated quantity overflowed."""


class SingularKronecker(SdemorError):
    """The vectorized evolution matrix is singular; closed-form integration
    is unavailable."""


class SingularKroneckerWarning(UserWarning):
    """Closed-form integration fell back to quadrature."""


class MemoryBudgetExceeded(SdemorError):
    """A full-order vectorized solve would exceed the memory budget."""


class GridMismatch(SdemorError):
    """Two trajectories that must share a time grid do not."""


class MissingGramian(SdemorError):
    """A required Gramian was not computed (full-order solves skipped)."""


class NotConvergedWarning(UserWarning):
    """Fixed-point iteration hit the iteration cap; best iterate returned."""


class SingularReducedOperator(SdemorError):
    """The reduced vectorized operator cannot be inverted."""


class UnstableSystem(SdemorError):
    """Mean-square stability is required but does not hold."""


class UnstableIterate(SdemorError):
    """Fixed-point iterates kept producing unstable reduced systems."""


class StepTooCoarse(SdemorError):
    """Simulation step exceeds the smallest gap between observation dates."""


class NotDiagonalModel(SdemorError):
    """Exact sampling requires the componentwise (diagonal) model structure."""


class CapMissing(SdemorError):
    """Stochastic-volatility simulation requires a cap on the variance
    process."""


class SingularRegressionWarning(UserWarning):
    """Least-squares regression was rank deficient; ridge perturbation
    applied."""


class InsufficientPaths(SdemorError):
    """Too few paths for a well-posed regression."""


class IndefiniteInput(SdemorError):
    """A matrix expected to be symmetric positive semidefinite is not."""
