"""Closed-form pattern-mixture identities and the MUBNS / MUB bias indices.

The sensitivity parameter phi in [0, 1] indexes how strongly selection
depends on the outcome itself rather than on the scaled proxy: phi = 0 is
selection at random given the observables, phi = 1 is selection driven by
the outcome.  For fixed phi the non-selected outcome regression is
identified from the two patterns' proxy moments through the factor

    g(phi, rho) = (phi + (1 - phi) * rho) / (phi * rho + (1 - phi)),

with rho = Cor(X, Y | Z) on the selected sample.  The per-coefficient index

    MUBNS(phi) = g(phi, rho) * sqrt(sigma_yy_z / sigma_xx_z) * (beta_x^sel - beta_x^nonsel)

measures the selected-minus-non-selected difference in the Y-on-Z
coefficients, and MUB = MUBNS * Pr(S = 0) rescales it against the whole
population.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, WeakProxyError
from .proxy import ConditionalMoments
from .statcore import RegressionFit, _as_float_array

# Below this conditional correlation the phi = 1 bound degenerates
# (g(1, rho) = 1 / rho): refuse to extrapolate.
WEAK_PROXY_RHO = 0.01

_DENOM_TOL = 1e-12


def _check_phi(phi: float) -> float:
    phi = float(phi)
    if not 0.0 <= phi <= 1.0:
        raise DataError(f"phi must lie in [0, 1], got {phi}")
    return phi


def g_factor(phi: float, rho: float) -> float:
    """Sensitivity factor g(phi, rho) = (phi + (1-phi) rho) / (phi rho + 1 - phi).

    g(0, rho) = rho and g(1, rho) = 1 / rho; raises WeakProxyError when the
    phi = 1 bound is requested with a near-zero conditional correlation, and
    when the denominator vanishes numerically.
    """
    phi = _check_phi(phi)
    rho = float(rho)
    if not -1.0 < rho <= 1.0:
        raise DataError(f"rho must lie in (-1, 1], got {rho}")
    if phi == 1.0 and abs(rho) < WEAK_PROXY_RHO:
        raise WeakProxyError(
            f"conditional correlation {rho:.4g} is too weak for the phi = 1 bound "
            f"(|rho| < {WEAK_PROXY_RHO})"
        )
    denom = phi * rho + (1.0 - phi)
    if abs(denom) < _DENOM_TOL:
        raise WeakProxyError(
            f"unstable sensitivity factor at phi = {phi:g} with rho = {rho:.4g} "
            "(denominator numerically zero)"
        )
    return (phi + (1.0 - phi) * rho) / denom


@dataclass(frozen=True)
class BiasIndexSet:
    """Per-coefficient MUBNS indices at one phi, optionally scaled to MUB."""

    phi: float
    mubns_intercept: float
    mubns_slopes: np.ndarray
    sigma_yy_z_0: float
    mub_intercept: float | None = None
    mub_slopes: np.ndarray | None = None
    nonselection_rate: float | None = None

    def __post_init__(self):
        slopes = _as_float_array(self.mubns_slopes, "mubns_slopes").reshape(-1)
        slopes.flags.writeable = False
        object.__setattr__(self, "mubns_slopes", slopes)
        _check_phi(self.phi)
        if (self.nonselection_rate is None) != (self.mub_intercept is None):
            raise DataError("MUB fields must be present exactly when a non-selection rate is")
        if self.nonselection_rate is not None:
            if not 0.0 <= self.nonselection_rate <= 1.0:
                raise DataError("non-selection rate must lie in [0, 1]")
            mub_slopes = _as_float_array(self.mub_slopes, "mub_slopes").reshape(-1)
            mub_slopes.flags.writeable = False
            object.__setattr__(self, "mub_slopes", mub_slopes)

    @property
    def mubns(self) -> np.ndarray:
        """Intercept index followed by slope indices."""
        return np.concatenate(([self.mubns_intercept], self.mubns_slopes))

    @property
    def mub(self) -> np.ndarray:
        if self.mub_intercept is None:
            raise DataError("MUB fields are absent; supply a non-selection rate first")
        return np.concatenate(([self.mub_intercept], self.mub_slopes))


def _require_patterns(sel: ConditionalMoments, nonsel: ConditionalMoments) -> None:
    if sel.pattern != "selected" or not sel.has_outcome:
        raise DataError("first argument must be selected-pattern moments with the outcome side")
    if nonsel.pattern != "nonselected":
        raise DataError("second argument must be non-selected-pattern moments")
    if sel.beta_xz_z.size != nonsel.beta_xz_z.size:
        raise DataError("patterns disagree on the number of predictors")
    if sel.sigma_xx_z <= 0.0:
        raise DataError("selected conditional proxy variance must be positive")


def nonselected_outcome_params(
    sel: ConditionalMoments, nonsel: ConditionalMoments, phi: float
) -> tuple[float, np.ndarray, float]:
    """Identified Y-on-Z parameters for the non-selected pattern at a given phi.

    Returns (intercept, slopes, residual variance).  A negative implied
    residual variance is floored at zero with a warning; it can occur when
    the non-selected proxy variance falls below the selected one and the
    sensitivity factor is large.
    """
    _require_patterns(sel, nonsel)
    g = g_factor(phi, sel.rho_xy_z)
    ratio = sel.sigma_yy_z / sel.sigma_xx_z
    scale = g * math.sqrt(ratio)
    beta_y0 = sel.beta_y0_z + scale * (nonsel.beta_x0_z - sel.beta_x0_z)
    beta_yz = sel.beta_yz_z + scale * (nonsel.beta_xz_z - sel.beta_xz_z)
    sigma_yy = sel.sigma_yy_z + g * g * ratio * (nonsel.sigma_xx_z - sel.sigma_xx_z)
    if sigma_yy < 0.0:
        warnings.warn(
            f"implied non-selected residual variance {sigma_yy:.4g} is negative; floored at 0",
            RuntimeWarning,
            stacklevel=2,
        )
        sigma_yy = 0.0
    return float(beta_y0), beta_yz, float(sigma_yy)


def mubns(sel: ConditionalMoments, nonsel: ConditionalMoments, phi: float) -> BiasIndexSet:
    """MUBNS indices (selected minus non-selected coefficients) at one phi."""
    beta_y0_0, beta_yz_0, sigma_yy_0 = nonselected_outcome_params(sel, nonsel, phi)
    return BiasIndexSet(
        phi=_check_phi(phi),
        mubns_intercept=float(sel.beta_y0_z - beta_y0_0),
        mubns_slopes=sel.beta_yz_z - beta_yz_0,
        sigma_yy_z_0=sigma_yy_0,
    )


def mub(index: BiasIndexSet, nonselection_rate: float) -> BiasIndexSet:
    """Rescale MUBNS by the overall non-selection rate Pr(S = 0)."""
    rate = float(nonselection_rate)
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"non-selection rate must lie in [0, 1], got {rate}")
    return BiasIndexSet(
        phi=index.phi,
        mubns_intercept=index.mubns_intercept,
        mubns_slopes=index.mubns_slopes,
        sigma_yy_z_0=index.sigma_yy_z_0,
        mub_intercept=index.mubns_intercept * rate,
        mub_slopes=index.mubns_slopes * rate,
        nonselection_rate=rate,
    )


def adjusted_coefficients(selected_fit: RegressionFit, index: BiasIndexSet) -> tuple[float, np.ndarray]:
    """Selected-sample coefficients with the MUB indices subtracted off."""
    if index.mub_intercept is None:
        raise DataError("adjustment requires MUB fields; apply a non-selection rate first")
    if selected_fit.slopes.size != index.mubns_slopes.size:
        raise DataError("fit and index disagree on the number of slopes")
    return (
        selected_fit.intercept - index.mub_intercept,
        selected_fit.slopes - index.mub_slopes,
    )


def mle_interval(sel: ConditionalMoments, nonsel: ConditionalMoments) -> np.ndarray:
    """Per-coefficient [min, max] of MUBNS over the endpoints phi = 0 and 1.

    Shape (k + 1, 2) with the intercept first.  The index is monotone in phi
    for fixed moments, so the endpoints bound the whole range; the bounds are
    still sorted defensively.
    """
    lo = mubns(sel, nonsel, 0.0).mubns
    hi = mubns(sel, nonsel, 1.0).mubns
    return np.sort(np.column_stack([lo, hi]), axis=1)
