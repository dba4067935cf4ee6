"""Exception hierarchy shared by all gibbstn modules."""


class GibbsTnError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(GibbsTnError, ValueError):
    """The caller violated a documented precondition."""


class DimensionError(UsageError):
    """Mismatched tensor extents or incompatible shapes."""


class ConvergenceError(GibbsTnError, RuntimeError):
    """An iterative solver failed to reach the requested tolerance.

    Carries the best residual seen so far in ``residual`` when available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResourceLimitError(GibbsTnError, RuntimeError):
    """A request exceeds the hard size caps (e.g. exact diagonalization)."""


class SnapshotFormatError(GibbsTnError, RuntimeError):
    """A snapshot file is malformed.  ``offset`` locates the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ConsistencyError(GibbsTnError, RuntimeError):
    """An internal invariant was violated (indicates a bug or bad state)."""


class FitError(GibbsTnError, RuntimeError):
    """Nonlinear least squares failed to converge.

    ``last_params`` holds the final iterate for diagnostics.
    """

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params
