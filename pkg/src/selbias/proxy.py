"""Auxiliary proxy construction and conditional moments by pattern.

The proxy X is the auxiliary-variable part of the best linear predictor of
the outcome fitted on the selected sample: X_i = a' A_i, where a holds the
coefficients of A from the regression of Y on (Z, A).  The conditional
correlation rho = Cor(X, Y | Z) on the selected sample is the strength
diagnostic that governs every downstream bias index.

For the non-selected pattern only means and covariances of (A, Z) are
required: the moments of X follow by linearity, var(X) = a' Sigma_aa a and
cov(X, Z) = a' Sigma_az, and the X-on-Z regression is read off those blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, MomentConsistencyError, WeakProxyError
from .statcore import (
    SummaryStats,
    _as_float_array,
    _svd_lstsq,
    regression_from_moments,
)

# Relative scale below which the fitted auxiliary coefficients are treated as
# carrying no information at all.
_NULL_PROXY_RTOL = 1e-8


def _normalize_blocks(y, z, a):
    y = _as_float_array(y, "outcome").reshape(-1)
    n = y.shape[0]
    if z is None:
        z = np.empty((n, 0))
    z = _as_float_array(z, "predictors")
    if z.ndim == 1:
        z = z[:, None]
    a = _as_float_array(a, "auxiliaries")
    if a.ndim == 1:
        a = a[:, None]
    if z.shape[0] != n or a.shape[0] != n:
        raise DataError("outcome, predictor and auxiliary blocks disagree on row count")
    if a.shape[1] == 0:
        raise DataError("at least one auxiliary column is required")
    return y, z, a


def _default_names(prefix: str, count: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{j + 1}" for j in range(count))


@dataclass(frozen=True)
class ProxySpec:
    """Coefficients defining the auxiliary proxy X = a_coeffs' A.

    ``z_coeffs`` and ``intercept`` record the rest of the outcome regression
    they came from; only ``a_coeffs`` enters the proxy itself.
    """

    a_coeffs: np.ndarray
    z_coeffs: np.ndarray
    intercept: float
    source: str = "linear"
    a_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        a = _as_float_array(self.a_coeffs, "a_coeffs").reshape(-1)
        z = _as_float_array(self.z_coeffs, "z_coeffs").reshape(-1)
        if a.size == 0:
            raise DataError("a_coeffs must have at least one entry")
        if self.source not in ("linear", "probit-latent"):
            raise DataError(f"unknown proxy source {self.source!r}")
        a_names = tuple(self.a_names) or _default_names("a", a.size)
        z_names = tuple(self.z_names) or _default_names("z", z.size)
        if len(a_names) != a.size or len(z_names) != z.size:
            raise DataError("coefficient names do not match coefficient counts")
        a.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "a_coeffs", a)
        object.__setattr__(self, "z_coeffs", z)
        object.__setattr__(self, "a_names", a_names)
        object.__setattr__(self, "z_names", z_names)

    @property
    def n_predictors(self) -> int:
        return self.z_coeffs.size

    def with_coeffs(self, a_coeffs, z_coeffs=None, intercept=None) -> "ProxySpec":
        """Copy with replaced coefficients (used for posterior draws)."""
        return ProxySpec(
            a_coeffs=a_coeffs,
            z_coeffs=self.z_coeffs if z_coeffs is None else z_coeffs,
            intercept=self.intercept if intercept is None else float(intercept),
            source=self.source,
            a_names=self.a_names,
            z_names=self.z_names,
        )


@dataclass(frozen=True)
class ConditionalMoments:
    """Moments of (X, Y) given Z for one pattern.

    The non-selected pattern carries only the X side; the Y side is
    identified through the sensitivity analysis, not estimated directly.
    """

    pattern: str
    beta_x0_z: float
    beta_xz_z: np.ndarray
    sigma_xx_z: float
    beta_y0_z: float | None = None
    beta_yz_z: np.ndarray | None = None
    sigma_yy_z: float | None = None
    sigma_xy_z: float | None = None

    def __post_init__(self):
        if self.pattern not in ("selected", "nonselected"):
            raise DataError("pattern must be 'selected' or 'nonselected'")
        bxz = _as_float_array(self.beta_xz_z, "beta_xz_z").reshape(-1)
        bxz.flags.writeable = False
        object.__setattr__(self, "beta_xz_z", bxz)
        if self.sigma_xx_z < 0:
            raise DataError("sigma_xx_z must be nonnegative")
        if self.beta_yz_z is not None:
            byz = _as_float_array(self.beta_yz_z, "beta_yz_z").reshape(-1)
            if byz.size != bxz.size:
                raise DataError("beta_yz_z and beta_xz_z disagree on predictor count")
            byz.flags.writeable = False
            object.__setattr__(self, "beta_yz_z", byz)
        if self.sigma_yy_z is not None and self.sigma_yy_z < 0:
            raise DataError("sigma_yy_z must be nonnegative")
        if self.sigma_xy_z is not None and self.sigma_yy_z is not None:
            bound = math.sqrt(max(self.sigma_xx_z, 0.0) * max(self.sigma_yy_z, 0.0))
            if abs(self.sigma_xy_z) > bound + 1e-10 * max(bound, 1.0):
                raise MomentConsistencyError(
                    f"|sigma_xy_z| = {abs(self.sigma_xy_z):g} exceeds the "
                    f"Cauchy-Schwarz bound {bound:g}"
                )

    @property
    def has_outcome(self) -> bool:
        return self.sigma_yy_z is not None

    @property
    def rho_xy_z(self) -> float:
        """Cor(X, Y | Z); zero when either conditional variance vanishes."""
        if self.sigma_xy_z is None or self.sigma_yy_z is None:
            raise DataError("rho_xy_z requires the outcome moments")
        denom = math.sqrt(self.sigma_xx_z * self.sigma_yy_z)
        if denom == 0.0:
            return 0.0
        return float(np.clip(self.sigma_xy_z / denom, -1.0, 1.0))


def fit_proxy_linear(
    y,
    z,
    a,
    z_names: Sequence[str] | None = None,
    a_names: Sequence[str] | None = None,
) -> ProxySpec:
    """Regress the outcome on (Z, A) over the selected sample and split out
    the auxiliary part as the proxy definition.

    Raises WeakProxyError when every auxiliary coefficient is negligible on
    the scale of the data (the proxy would carry no information).
    """
    y, z, a = _normalize_blocks(y, z, a)
    n, p = z.shape
    q = a.shape[1]
    design = np.column_stack([np.ones(n), z, a])
    if n <= design.shape[1]:
        raise DataError(f"selected sample too small ({n} rows) for {design.shape[1]} coefficients")
    coef, _, _, _ = _svd_lstsq(y, design)
    spec = ProxySpec(
        a_coeffs=coef[1 + p :],
        z_coeffs=coef[1 : 1 + p],
        intercept=float(coef[0]),
        source="linear",
        a_names=tuple(a_names) if a_names else _default_names("a", q),
        z_names=tuple(z_names) if z_names else _default_names("z", p),
    )
    _check_usable_proxy(spec, a, y_scale=float(np.std(y)))
    return spec


def _check_usable_proxy(spec: ProxySpec, a: np.ndarray, y_scale: float) -> None:
    a_sd = np.std(a, axis=0)
    signal = float(np.max(np.abs(spec.a_coeffs) * a_sd)) if a_sd.size else 0.0
    if signal < _NULL_PROXY_RTOL * max(y_scale, 1e-300):
        raise WeakProxyError(
            "no usable proxy: every auxiliary coefficient is numerically zero, "
            "the auxiliary variables carry no information about the outcome"
        )


def proxy_values(spec: ProxySpec, a_rows) -> np.ndarray:
    """Evaluate X_i = a_coeffs' A_i for each row."""
    a = _as_float_array(a_rows, "auxiliaries")
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] != spec.a_coeffs.size:
        raise DataError(
            f"auxiliary matrix has {a.shape[1]} columns, proxy expects {spec.a_coeffs.size}"
        )
    return a @ spec.a_coeffs


def conditional_moments_selected(y, z, a, spec: ProxySpec) -> ConditionalMoments:
    """Fit X-on-Z and Y-on-Z over the selected rows and bundle the moments.

    Residual variances and the residual cross-product all use the common
    divisor n - (p + 1), so the implied correlation is divisor-free.
    """
    y, z, a = _normalize_blocks(y, z, a)
    n, p = z.shape
    x = proxy_values(spec, a)
    design = np.column_stack([np.ones(n), z])
    if n <= p + 1:
        raise DataError("selected sample too small to regress on the predictors")
    coef_x, _, _, _ = _svd_lstsq(x, design)
    coef_y, _, _, _ = _svd_lstsq(y, design)
    resid_x = x - design @ coef_x
    resid_y = y - design @ coef_y
    df = n - (p + 1)
    sigma_xx = float(resid_x @ resid_x) / df
    sigma_yy = float(resid_y @ resid_y) / df
    sigma_xy = float(resid_x @ resid_y) / df
    # Division guard: conditional variances that vanish relative to the
    # marginal ones signal exact collinearity with the predictors.
    var_x = float(np.var(x, ddof=1)) if n > 1 else 0.0
    var_y = float(np.var(y, ddof=1)) if n > 1 else 0.0
    if sigma_xx <= 1e-12 * max(var_x, 1e-300) or sigma_yy <= 1e-12 * max(var_y, 1e-300):
        raise DataError(
            "zero residual variance given the predictors "
            f"(sigma_xx_z={sigma_xx:g}, sigma_yy_z={sigma_yy:g})"
        )
    # Guard against rounding pushing the implied correlation past 1.
    bound = math.sqrt(sigma_xx * sigma_yy)
    sigma_xy = float(np.clip(sigma_xy, -bound, bound))
    return ConditionalMoments(
        pattern="selected",
        beta_x0_z=float(coef_x[0]),
        beta_xz_z=coef_x[1:],
        sigma_xx_z=sigma_xx,
        beta_y0_z=float(coef_y[0]),
        beta_yz_z=coef_y[1:],
        sigma_yy_z=sigma_yy,
        sigma_xy_z=sigma_xy,
    )


def conditional_moments_nonselected(spec: ProxySpec, nonselected: SummaryStats) -> ConditionalMoments:
    """Moments of the proxy given Z for the non-selected pattern, computed
    from aggregate statistics of (A, Z) alone.

    var(X) and cov(X, Z) follow from the proxy coefficients by linearity;
    the X-on-Z regression is then plain moment algebra, and the conditional
    variance carries the finite-sample factor n0 / (n0 - p) (taken as 1 for
    population aggregates with no count).
    """
    a_names, z_names = spec.a_names, spec.z_names
    q, p = len(a_names), len(z_names)
    sub = nonselected.subset(list(a_names) + list(z_names))
    n0 = sub.count
    if n0 is not None and n0 <= p:
        raise DataError(f"non-selected count {n0} must exceed the {p} predictors")
    acoef = spec.a_coeffs

    sigma_aa = sub.cov[:q, :q]
    sigma_az = sub.cov[:q, q:]
    sigma_xx = float(acoef @ sigma_aa @ acoef)
    sigma_xz = acoef @ sigma_az
    x_mean = float(acoef @ sub.means[:q])
    z_mean = sub.means[q:]

    joint_means = np.concatenate(([x_mean], z_mean))
    joint_cov = np.empty((p + 1, p + 1))
    joint_cov[0, 0] = sigma_xx
    joint_cov[0, 1:] = sigma_xz
    joint_cov[1:, 0] = sigma_xz
    joint_cov[1:, 1:] = sub.cov[q:, q:]
    intercept, slopes, cond_var = regression_from_moments(joint_means, joint_cov, 0, range(1, p + 1))

    if cond_var < -1e-12 * max(sigma_xx, 1.0):
        raise MomentConsistencyError(
            f"aggregates imply a negative conditional proxy variance ({cond_var:g})"
        )
    factor = 1.0 if n0 is None else n0 / (n0 - p)
    return ConditionalMoments(
        pattern="nonselected",
        beta_x0_z=intercept,
        beta_xz_z=slopes,
        sigma_xx_z=max(cond_var, 0.0) * factor,
    )
