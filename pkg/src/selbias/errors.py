"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a precondition (shape, finiteness, missing cells)."""


class RankDeficiencyError(DataError):
    """Design matrix or moment block is numerically rank deficient."""


class MomentConsistencyError(ValueError):
    """Supplied summary statistics are internally inconsistent
    (for example a negative implied residual variance)."""


class WeakProxyError(RuntimeError):
    """The auxiliary proxy is too weakly correlated with the outcome for the
    requested computation (phi = 1 bound, or no usable proxy at all)."""


class ConvergenceError(RuntimeError):
    """An iterative fit failed to converge."""


class PerfectSeparationError(ConvergenceError):
    """Probit fit diverged, consistent with perfectly separated classes."""


class UnstableDrawsError(RuntimeError):
    """Too large a share of posterior draws hit the weak-proxy instability."""
