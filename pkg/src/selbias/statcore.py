"""Sufficient statistics and exact least squares.

Regressions can be fitted either from microdata or from externally supplied
means and covariances; the two paths agree coefficient-wise, and the residual
variances agree once the degrees-of-freedom factors are matched.  Internally
every covariance matrix uses the n-1 divisor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, MomentConsistencyError, RankDeficiencyError

# Condition number beyond which a design or moment block is declared rank
# deficient.
COND_LIMIT = 1e10

_PATTERNS = ("selected", "nonselected")


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class VariableSet:
    """Named variables with their roles in the target regression.

    Exactly one outcome, zero or more predictors, at least one auxiliary.
    """

    outcome: str
    predictors: tuple[str, ...] = ()
    auxiliaries: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "auxiliaries", tuple(self.auxiliaries))
        if not self.auxiliaries:
            raise DataError("at least one auxiliary variable is required")
        names = self.names
        if len(set(names)) != len(names):
            raise DataError(f"variable names are not unique: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return (self.outcome,) + self.predictors + self.auxiliaries


@dataclass(frozen=True)
class SummaryStats:
    """Means and covariance matrix of a named variable set for one pattern.

    Parameters
    ----------
    variables : sequence of str
        Variable names, in the order used by ``means`` and ``cov``.
    count : int or None
        Number of units behind the summary (None for exact population
        aggregates, e.g. census figures).
    means : array, shape (m,)
    cov : array, shape (m, m)
        Symmetric positive semidefinite, n-1 divisor convention.
    pattern : {"selected", "nonselected"}
    """

    variables: tuple[str, ...]
    count: int | None
    means: np.ndarray
    cov: np.ndarray
    pattern: str = "nonselected"

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        means = _as_float_array(self.means, "means").reshape(-1)
        cov = _as_float_array(self.cov, "cov")
        m = len(self.variables)
        if means.shape != (m,) or cov.shape != (m, m):
            raise DataError(
                f"summary dimensions do not match {m} variables: "
                f"means {means.shape}, cov {cov.shape}"
            )
        if self.pattern not in _PATTERNS:
            raise DataError(f"pattern must be one of {_PATTERNS}")
        if self.count is not None and self.count <= 0:
            raise DataError("count must be a positive integer")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(cov).max())):
            raise DataError("covariance matrix is not symmetric")
        cov = (cov + cov.T) / 2.0
        if m > 0:
            eigmin = float(np.linalg.eigvalsh(cov).min())
            if eigmin < -1e-10 * max(np.trace(cov), 1.0):
                raise DataError(f"covariance matrix is not PSD (min eigenvalue {eigmin:g})")
        means.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov", cov)

    def index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise KeyError(f"variable {name!r} not present in summary {self.variables}") from None

    def subset(self, names: Sequence[str]) -> "SummaryStats":
        """Summary restricted (and reordered) to ``names``."""
        idx = [self.index(n) for n in names]
        return SummaryStats(
            variables=tuple(names),
            count=self.count,
            means=self.means[idx],
            cov=self.cov[np.ix_(idx, idx)],
            pattern=self.pattern,
        )


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit of one response on an intercept plus predictors."""

    intercept: float
    slopes: np.ndarray
    resid_var: float
    coef_cov: np.ndarray
    resid_df: int

    def __post_init__(self):
        slopes = _as_float_array(self.slopes, "slopes").reshape(-1)
        coef_cov = _as_float_array(self.coef_cov, "coef_cov")
        k = slopes.size + 1
        if coef_cov.shape != (k, k):
            raise DataError(f"coef_cov shape {coef_cov.shape} does not match {k} coefficients")
        if self.resid_var < 0:
            raise DataError("resid_var must be nonnegative")
        slopes.flags.writeable = False
        coef_cov.flags.writeable = False
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "coef_cov", coef_cov)

    @property
    def coefficients(self) -> np.ndarray:
        """Intercept followed by slopes."""
        return np.concatenate(([self.intercept], self.slopes))

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.coef_cov))


def compute_summary(
    table,
    names: Sequence[str] | None = None,
    pattern: str = "selected",
) -> SummaryStats:
    """Sample means and unbiased (n-1) covariance of a rectangular table.

    Parameters
    ----------
    table : array, shape (n, m)
        Complete numeric microdata, one row per unit.
    names : sequence of str, optional
        Column names; defaults to x1..xm.
    """
    data = _as_float_array(table, "microdata")
    if data.ndim == 1:
        data = data[:, None]
    n, m = data.shape
    if n < 2:
        raise DataError(f"need at least 2 rows to form a covariance, got {n}")
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(m))
    means = data.mean(axis=0)
    centered = data - means
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return SummaryStats(variables=tuple(names), count=n, means=means, cov=cov, pattern=pattern)


def _svd_lstsq(y: np.ndarray, X: np.ndarray):
    """Rank-revealing least squares via SVD.

    Returns (coefficients, xtx_inverse, rss, condition_number).
    """
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] <= 0.0 or s[0] / s[-1] > COND_LIMIT:
        cond = np.inf if s[-1] <= 0.0 else s[0] / s[-1]
        raise RankDeficiencyError(
            f"design matrix is rank deficient (condition number {cond:.3g} > {COND_LIMIT:.0g})"
        )
    coef = vt.T @ ((u.T @ y) / s)
    resid = y - X @ coef
    rss = float(resid @ resid)
    xtx_inv = (vt.T / s**2) @ vt
    return coef, xtx_inv, rss, s[0] / s[-1]


def ols_from_micro(y, X) -> RegressionFit:
    """Exact least squares of ``y`` on a design matrix with a leading ones column.

    The residual variance uses the unbiased divisor n - k where k counts all
    design columns (intercept included), and ``coef_cov`` is
    resid_var * (X'X)^-1.
    """
    y = _as_float_array(y, "response").reshape(-1)
    X = _as_float_array(X, "design")
    if X.ndim != 2:
        raise DataError("design matrix must be two-dimensional")
    n, k = X.shape
    if y.shape[0] != n:
        raise DataError(f"response length {y.shape[0]} does not match {n} design rows")
    if n <= k:
        raise DataError(f"need more rows ({n}) than design columns ({k})")
    if not np.all(X[:, 0] == 1.0):
        raise DataError("design matrix must carry a leading column of ones")
    coef, xtx_inv, rss, _ = _svd_lstsq(y, X)
    df = n - k
    resid_var = max(rss, 0.0) / df
    coef_cov = resid_var * xtx_inv
    return RegressionFit(
        intercept=float(coef[0]),
        slopes=coef[1:],
        resid_var=resid_var,
        coef_cov=(coef_cov + coef_cov.T) / 2.0,
        resid_df=df,
    )


def _solve_moment_block(cov_pp: np.ndarray, cov_pr: np.ndarray) -> np.ndarray:
    """Solve cov_pp @ slopes = cov_pr with a rank check."""
    if cov_pp.shape[0] == 0:
        return np.zeros(0)
    eigvals = np.linalg.eigvalsh((cov_pp + cov_pp.T) / 2.0)
    if eigvals[0] <= 0 or eigvals[-1] / eigvals[0] > COND_LIMIT:
        raise RankDeficiencyError("predictor covariance block is singular or near singular")
    return np.linalg.solve(cov_pp, cov_pr)


def regression_from_moments(
    means: np.ndarray,
    cov: np.ndarray,
    response_index: int,
    predictor_indices: Sequence[int],
):
    """Intercept, slopes and raw conditional variance implied by joint moments.

    The conditional variance is the Schur complement
    sigma_rr - Sigma_rp Sigma_pp^-1 Sigma_pr with no degrees-of-freedom
    adjustment; callers apply their own finite-sample factor.
    """
    p_idx = list(predictor_indices)
    cov_pp = cov[np.ix_(p_idx, p_idx)]
    cov_pr = cov[p_idx, response_index]
    slopes = _solve_moment_block(cov_pp, cov_pr)
    intercept = float(means[response_index] - slopes @ means[p_idx])
    cond_var = float(cov[response_index, response_index] - cov_pr @ slopes)
    return intercept, slopes, cond_var


def ols_from_summary(stats: SummaryStats, response: str, predictors: Sequence[str]) -> RegressionFit:
    """Least squares recovered from means and covariances alone.

    Coefficients match ``ols_from_micro`` on the underlying microdata exactly.
    The residual variance carries the finite-sample factor n / (n - k) with k
    the number of predictors, so it differs from the microdata value by a
    known degrees-of-freedom ratio.
    """
    if stats.count is None:
        raise DataError("ols_from_summary requires a summary with a unit count")
    predictors = list(predictors)
    names = [response] + predictors
    sub = stats.subset(names)
    n = sub.count
    k = len(predictors)
    if n <= k:
        raise DataError(f"summary count {n} too small for {k} predictors")
    intercept, slopes, cond_var = regression_from_moments(sub.means, sub.cov, 0, range(1, k + 1))
    if cond_var < -1e-12 * max(sub.cov[0, 0], 1.0):
        raise MomentConsistencyError(
            f"summary implies a negative residual variance ({cond_var:g}); "
            "the supplied moments are inconsistent"
        )
    resid_var = max(cond_var, 0.0) * n / (n - k)

    # X'X reconstructed from the moments; the n-1 divisor is undone so the
    # covariance of the coefficients matches the microdata formula.
    mp = sub.means[1:]
    xtx = np.empty((k + 1, k + 1))
    xtx[0, 0] = n
    xtx[0, 1:] = n * mp
    xtx[1:, 0] = n * mp
    xtx[1:, 1:] = (n - 1) * sub.cov[1:, 1:] + n * np.outer(mp, mp)
    eigvals = np.linalg.eigvalsh(xtx)
    if eigvals[0] <= 0 or eigvals[-1] / eigvals[0] > COND_LIMIT:
        raise RankDeficiencyError("moment matrix is singular or near singular")
    coef_cov = resid_var * np.linalg.inv(xtx)
    return RegressionFit(
        intercept=intercept,
        slopes=slopes,
        resid_var=resid_var,
        coef_cov=(coef_cov + coef_cov.T) / 2.0,
        resid_df=n - k,
    )
