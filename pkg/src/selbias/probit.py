"""Latent-normal machinery for binary outcomes.

A binary outcome is modelled through a latent standard-normal score U with
Y = 1 exactly when U > 0.  The probit fit of Y on (Z, A) defines the proxy
on the latent scale; a data-augmentation step then draws U given the data
(truncated normals), redraws the coefficients from a linear model of U with
unit residual variance, and rescales the U-on-Z coefficients so that the
latent residual variance given Z alone is 1 again.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import ConvergenceError, DataError, PerfectSeparationError
from .proxy import ProxySpec, _check_usable_proxy, _default_names, _normalize_blocks
from .statcore import RegressionFit, _as_float_array, _svd_lstsq

# Lower truncation point beyond which inverse-CDF sampling loses precision
# and the exponential rejection sampler takes over.
_TAIL_SWITCH = 5.0


def truncated_normal_above(lower, rng: np.random.Generator) -> np.ndarray:
    """Draws from a standard normal conditioned on exceeding ``lower``.

    Vectorized over the truncation points.  Moderate truncations use the
    inverse survival function (accurate because the argument shrinks toward
    zero, not one); truncations beyond 5 use the shifted-exponential
    rejection sampler, which stays exact arbitrarily deep in the tail.
    """
    lower = np.atleast_1d(_as_float_array(lower, "lower"))
    out = np.empty(lower.shape)

    easy = lower <= _TAIL_SWITCH
    if np.any(easy):
        a = lower[easy]
        tail = ndtr(-a)  # P(X > a)
        # u in (0, 1]: keeps the ndtri argument strictly positive.
        u = 1.0 - rng.random(a.shape)
        out[easy] = -ndtri(u * tail)

    hard = ~easy
    if np.any(hard):
        out[hard] = _tail_rejection(lower[hard], rng)
    return out


def _tail_rejection(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Exponential proposal with the optimal rate (a + sqrt(a^2 + 4)) / 2.
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty(a.shape)
    todo = np.ones(a.shape, dtype=bool)
    while np.any(todo):
        ai = a[todo]
        li = lam[todo]
        x = ai + rng.exponential(scale=1.0 / li)
        accept = rng.random(ai.shape) <= np.exp(-0.5 * (x - li) ** 2)
        idx = np.flatnonzero(todo)[accept]
        out[idx] = x[accept]
        todo[idx] = False
    return out


def draw_latent(y, linear_predictor, rng: np.random.Generator) -> np.ndarray:
    """One draw of the latent scores given the binary outcomes.

    u_i ~ Normal(linear_predictor_i, 1) truncated to (0, inf) when y_i = 1
    and to (-inf, 0) when y_i = 0.
    """
    y = np.asarray(y)
    lp = _as_float_array(linear_predictor, "linear_predictor").reshape(-1)
    if y.shape != lp.shape:
        raise DataError("outcome and linear predictor lengths differ")
    pos = y == 1
    u = np.empty(lp.shape)
    if np.any(pos):
        u[pos] = lp[pos] + truncated_normal_above(-lp[pos], rng)
    if np.any(~pos):
        u[~pos] = lp[~pos] - truncated_normal_above(lp[~pos], rng)
    # Zero draws are measure-zero but possible in floating point; nudge them
    # onto the side the outcome demands.
    tiny = np.finfo(float).tiny
    u[pos] = np.maximum(u[pos], tiny)
    u[~pos] = np.minimum(u[~pos], -tiny)
    return u


def draw_coefficients(u, design, rng: np.random.Generator) -> np.ndarray:
    """Coefficient draw for the latent linear model with unit residual variance.

    beta ~ Normal(OLS(u on design), (D'D)^-1).
    """
    u = _as_float_array(u, "latent scores").reshape(-1)
    design = _as_float_array(design, "design")
    if design.shape[0] != u.shape[0]:
        raise DataError("latent vector and design disagree on row count")
    coef, xtx_inv, _, _ = _svd_lstsq(u, design)
    chol = np.linalg.cholesky((xtx_inv + xtx_inv.T) / 2.0)
    return coef + chol @ rng.standard_normal(coef.shape)


def rescale_u_on_z(
    u_on_z: RegressionFit, sigma_uu_z_draw: float, mode: str = "sqrt"
) -> tuple[float, np.ndarray]:
    """Bring U-on-Z coefficients back to the unit-latent-variance scale.

    The latent scores are drawn with unit variance given (Z, A); given Z
    alone their residual variance exceeds 1, so the coefficients must be
    shrunk before they live on the probit scale of the target model.  The
    default divides by the square root of the variance draw (the scaling
    that restores a unit-variance latent score); ``mode="variance"`` divides
    by the draw itself.
    """
    draw = float(sigma_uu_z_draw)
    if draw <= 0.0:
        raise DataError(f"variance draw must be positive, got {draw}")
    if mode == "sqrt":
        c = np.sqrt(draw)
    elif mode == "variance":
        c = draw
    else:
        raise DataError(f"unknown rescale mode {mode!r} (expected 'sqrt' or 'variance')")
    return u_on_z.intercept / c, u_on_z.slopes / c


def fit_probit(y, design, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Maximum-likelihood probit coefficients via iteratively reweighted
    least squares on an internally standardized design.

    Raises PerfectSeparationError when the coefficient norm diverges and
    ConvergenceError when the iteration cap is reached.
    """
    y = np.asarray(y)
    design = _as_float_array(design, "design")
    n, k = design.shape
    uniq = np.unique(y)
    if not np.all(np.isin(uniq, (0, 1))):
        raise DataError(f"binary outcome must contain only 0 and 1, found values {uniq}")
    if uniq.size < 2:
        raise DataError("both outcome classes must be present to fit a probit model")
    if n <= k:
        raise DataError(f"need more rows ({n}) than coefficients ({k})")
    yf = y.astype(float)

    # Standardize non-constant columns; divergence detection is then a plain
    # norm threshold regardless of the data's units.  Centering is only
    # applied when a constant column exists to absorb the induced shift.
    center = design.mean(axis=0)
    scale = design.std(axis=0)
    const = scale < 1e-12 * np.maximum(np.abs(center), 1.0)
    scale[const] = 1.0
    if np.any(const):
        center[const] = 0.0
        anchor = int(np.flatnonzero(const)[0])
    else:
        center[:] = 0.0
        anchor = None
    std_design = (design - center) / scale

    beta = np.zeros(k)
    if anchor is not None:
        beta[anchor] = ndtri(np.clip(yf.mean(), 1e-10, 1 - 1e-10)) / std_design[0, anchor]
    for _ in range(max_iter):
        eta = std_design @ beta
        p = np.clip(ndtr(eta), 1e-300, 1.0 - 1e-16)
        q = np.clip(ndtr(-eta), 1e-300, 1.0 - 1e-16)
        dens = np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        w = dens * dens / (p * q)
        score = std_design.T @ (dens * (yf - p) / (p * q))
        info = (std_design * w[:, None]).T @ std_design
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular information matrix in the probit fit") from exc
        beta = beta + step
        if np.linalg.norm(beta) > 1e4:
            raise PerfectSeparationError(
                "probit coefficients diverged; the classes appear perfectly separated"
            )
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise ConvergenceError(
            f"probit fit did not converge in {max_iter} iterations (possible quasi-separation)"
        )

    coef = beta / scale
    if anchor is not None:
        # Absorb the centering shift into the constant column's coefficient.
        coef[anchor] -= float(coef @ center) / design[0, anchor]
    return coef


def probit_coef_cov(y, design, coef) -> np.ndarray:
    """Inverse Fisher information at the fitted coefficients."""
    design = _as_float_array(design, "design")
    eta = design @ _as_float_array(coef, "coef")
    p = np.clip(ndtr(eta), 1e-300, 1.0 - 1e-16)
    q = np.clip(ndtr(-eta), 1e-300, 1.0 - 1e-16)
    dens = np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
    w = dens * dens / (p * q)
    info = (design * w[:, None]).T @ design
    cov = np.linalg.inv(info)
    return (cov + cov.T) / 2.0


def probit_log_likelihood(y, design, coef) -> float:
    eta = _as_float_array(design, "design") @ _as_float_array(coef, "coef")
    y = np.asarray(y).astype(bool)
    return float(np.sum(log_ndtr(eta[y])) + np.sum(log_ndtr(-eta[~y])))


def fit_probit_proxy(
    y,
    z,
    a,
    z_names: Sequence[str] | None = None,
    a_names: Sequence[str] | None = None,
) -> ProxySpec:
    """Probit fit of the binary outcome on (Z, A) over the selected sample,
    split into the proxy definition on the latent scale."""
    y_arr = np.asarray(y)
    _, z_mat, a_mat = _normalize_blocks(np.zeros(len(y_arr)), z, a)
    n, p = z_mat.shape
    q = a_mat.shape[1]
    design = np.column_stack([np.ones(n), z_mat, a_mat])
    coef = fit_probit(y_arr, design)
    spec = ProxySpec(
        a_coeffs=coef[1 + p :],
        z_coeffs=coef[1 : 1 + p],
        intercept=float(coef[0]),
        source="probit-latent",
        a_names=tuple(a_names) if a_names else _default_names("a", q),
        z_names=tuple(z_names) if z_names else _default_names("z", p),
    )
    # Latent residual scale is 1 by construction.
    _check_usable_proxy(spec, a_mat, y_scale=1.0)
    return spec
