"""Fully Bayesian posterior draws of the MUBNS / MUB indices.

Under flat (Jeffreys) priors the posterior of the selected-pattern
parameters factors into ordinary conjugate pieces: each residual variance is
a scaled inverse chi-squared draw (RSS over a chi-squared with the fit's
residual degrees of freedom) and each coefficient vector is a conditional
normal around the least-squares fit.  The bivariate law of (X, Y) given Z is
drawn through the triangular factorization Y | Z followed by X | (Y, Z) and
reassembled; the proxy coefficients themselves are redrawn from the
Y-on-(Z, A) posterior every iteration so their uncertainty propagates into
the indices.

For binary outcomes the same second stage runs on latent scores produced by
a data-augmentation chain (see ``probit``): each sweep redraws the latent
scores, the coefficients of the latent model, the proxy, and finally the
index draw, after rescaling the latent-given-Z coefficients back to unit
residual variance.

Non-selected aggregate uncertainty is either ignored (``fixed``) or
propagated by perturbing the supplied means and covariance according to
their normal-theory sampling distribution (``resample``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import wishart

from .errors import DataError, MomentConsistencyError, RankDeficiencyError, UnstableDrawsError
from .pmm import WEAK_PROXY_RHO, _DENOM_TOL
from .probit import draw_latent, fit_probit_proxy, rescale_u_on_z
from .proxy import (
    ConditionalMoments,
    ProxySpec,
    _default_names,
    _normalize_blocks,
    conditional_moments_nonselected,
    fit_proxy_linear,
)
from .statcore import COND_LIMIT, RegressionFit, SummaryStats, _as_float_array

# Attempts at redrawing phi before a draw is declared hopelessly unstable.
_PHI_REDRAW_CAP = 100
# Abort when more than this share of draws hit the instability.
_UNSTABLE_SHARE = 0.10

_MIN_DRAWS = 100


@dataclass(frozen=True)
class PhiPrior:
    """Prior on the sensitivity parameter phi.

    kinds: ``uniform`` on (0, 1), ``discrete`` with equal mass on
    {0, 0.5, 1}, or ``point`` at a fixed value.
    """

    kind: str
    value: float | None = None

    _KINDS = ("uniform", "discrete", "point")
    _DISCRETE_SUPPORT = (0.0, 0.5, 1.0)

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise DataError(f"unknown phi prior kind {self.kind!r} (expected one of {self._KINDS})")
        if self.kind == "point":
            if self.value is None or not 0.0 <= self.value <= 1.0:
                raise DataError("point prior needs a value in [0, 1]")
        elif self.value is not None:
            raise DataError(f"{self.kind} prior takes no value")

    @classmethod
    def uniform(cls) -> "PhiPrior":
        return cls("uniform")

    @classmethod
    def discrete(cls) -> "PhiPrior":
        return cls("discrete")

    @classmethod
    def point(cls, value: float) -> "PhiPrior":
        return cls("point", float(value))

    def draw(self, rng: np.random.Generator, size: int | None = None):
        if self.kind == "uniform":
            return rng.random() if size is None else rng.random(size)
        if self.kind == "discrete":
            support = np.asarray(self._DISCRETE_SUPPORT)
            if size is None:
                return float(support[rng.integers(len(support))])
            return support[rng.integers(len(support), size=size)]
        return self.value if size is None else np.full(size, self.value)


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior draws of the per-coefficient indices with their summaries."""

    draws: np.ndarray
    median: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_draws: int
    seed: int
    n_unstable: int = 0
    phi_draws: np.ndarray | None = None
    rho_draws: np.ndarray | None = None
    nonselection_rate: float | None = None
    coefficients: tuple[str, ...] = ()

    def __post_init__(self):
        draws = _as_float_array(self.draws, "draws")
        if draws.ndim != 2 or draws.shape[0] != self.n_draws:
            raise DataError("draws must be a (n_draws, n_coefficients) matrix")
        draws.flags.writeable = False
        object.__setattr__(self, "draws", draws)
        if not (np.all(self.ci_lower <= self.median) and np.all(self.median <= self.ci_upper)):
            raise DataError("credible interval does not bracket the median")

    @property
    def width(self) -> np.ndarray:
        return self.ci_upper - self.ci_lower

    @property
    def mub_draws(self) -> np.ndarray:
        """MUB draws, exactly the MUBNS draws times the non-selection rate."""
        if self.nonselection_rate is None:
            raise DataError("no non-selection rate was supplied")
        return self.draws * self.nonselection_rate

    def scaled_by_rate(self) -> "PosteriorSummary":
        """Summary of the MUB draws (requires a non-selection rate)."""
        rate = self.nonselection_rate
        if rate is None:
            raise DataError("no non-selection rate was supplied")
        return PosteriorSummary(
            draws=self.draws * rate,
            median=self.median * rate,
            ci_lower=self.ci_lower * rate,
            ci_upper=self.ci_upper * rate,
            n_draws=self.n_draws,
            seed=self.seed,
            n_unstable=self.n_unstable,
            phi_draws=self.phi_draws,
            rho_draws=self.rho_draws,
            nonselection_rate=None,
            coefficients=self.coefficients,
        )


def summarize(
    draws,
    seed: int = 0,
    phi_draws=None,
    rho_draws=None,
    n_unstable: int = 0,
    nonselection_rate: float | None = None,
    coefficients: Sequence[str] = (),
) -> PosteriorSummary:
    """Componentwise median and central 95% interval of a draw matrix.

    Percentiles interpolate linearly between order statistics.
    """
    draws = _as_float_array(draws, "draws")
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < _MIN_DRAWS:
        raise DataError(f"need at least {_MIN_DRAWS} draws to summarize, got {draws.shape[0]}")
    lo, med, hi = np.percentile(draws, [2.5, 50.0, 97.5], axis=0)
    return PosteriorSummary(
        draws=draws,
        median=med,
        ci_lower=lo,
        ci_upper=hi,
        n_draws=draws.shape[0],
        seed=seed,
        n_unstable=n_unstable,
        phi_draws=None if phi_draws is None else np.asarray(phi_draws, dtype=float),
        rho_draws=None if rho_draws is None else np.asarray(rho_draws, dtype=float),
        nonselection_rate=nonselection_rate,
        coefficients=tuple(coefficients),
    )


class _DesignPieces:
    """SVD-backed pieces of a fixed design matrix, reusable across responses."""

    def __init__(self, design: np.ndarray, what: str = "design"):
        n, k = design.shape
        self.design = design
        self.df = n - k
        if self.df < 1:
            raise DataError(f"posterior improper: {n} rows cannot support {k} coefficients")
        u, s, vt = np.linalg.svd(design, full_matrices=False)
        if s[-1] <= 0 or s[0] / s[-1] > COND_LIMIT:
            raise RankDeficiencyError(f"{what} is rank deficient")
        self.pinv = (vt.T / s) @ u.T
        xtx_inv = (vt.T / s**2) @ vt
        self.xtx_inv = (xtx_inv + xtx_inv.T) / 2.0
        self.chol = np.linalg.cholesky(self.xtx_inv)

    def lstsq(self, response: np.ndarray) -> tuple[np.ndarray, float]:
        coef = self.pinv @ response
        resid = response - self.design @ coef
        return coef, max(float(resid @ resid), 0.0)

    def conjugate_draws(self, response: np.ndarray, n: int, rng: np.random.Generator):
        """n joint draws of (coefficients, residual variance) under a flat prior."""
        coef, rss = self.lstsq(response)
        sigma = rss / rng.chisquare(self.df, size=n)
        noise = rng.standard_normal((n, coef.size)) @ self.chol.T
        return coef[None, :] + np.sqrt(sigma)[:, None] * noise, sigma


class _SelectedLinearModel:
    """Posterior-draw engine for the selected-pattern parameters with a
    continuous outcome.

    The X-on-(Y, Z) stage depends on the current proxy draw only through
    linear and quadratic forms in its coefficients, so whole batches of
    draws reduce to matrix algebra.
    """

    def __init__(self, y, z, a):
        y, z, a = _normalize_blocks(y, z, a)
        self.n, self.p = z.shape
        self.q = a.shape[1]
        ones = np.ones(self.n)
        self.y = y
        self.d_full = _DesignPieces(np.column_stack([ones, z, a]), "outcome design")
        self.d_z = _DesignPieces(np.column_stack([ones, z]), "predictor design")
        self.d_yz = _DesignPieces(np.column_stack([ones, y, z]), "X | Y, Z design")

        # X on (1, Y, Z) with X = A @ a_draw: the fitted coefficients are
        # w_mat @ a_draw and the residual sum of squares is a' gram a.
        self.w_mat = self.d_yz.pinv @ a
        proj = self.d_yz.design @ self.w_mat
        gram = a.T @ a - a.T @ proj
        self.gram = (gram + gram.T) / 2.0

    def draw_batch(self, n_draws: int, rng: np.random.Generator) -> dict:
        p = self.p
        proxy_coef, _ = self.d_full.conjugate_draws(self.y, n_draws, rng)
        a_draws = proxy_coef[:, 1 + p :]

        coef_yz, sigma_yy_z = self.d_z.conjugate_draws(self.y, n_draws, rng)
        beta_y0_z = coef_yz[:, 0]
        beta_yz_z = coef_yz[:, 1:]

        rss3 = np.maximum(np.einsum("bi,ij,bj->b", a_draws, self.gram, a_draws), 0.0)
        sigma_xx_yz = rss3 / rng.chisquare(self.d_yz.df, size=n_draws)
        mean3 = a_draws @ self.w_mat.T
        noise3 = rng.standard_normal((n_draws, self.w_mat.shape[0])) @ self.d_yz.chol.T
        coef3 = mean3 + np.sqrt(sigma_xx_yz)[:, None] * noise3
        b_xy = coef3[:, 1]

        sigma_xy_z = b_xy * sigma_yy_z
        sigma_xx_z = sigma_xx_yz + b_xy**2 * sigma_yy_z
        beta_x0_z = coef3[:, 0] + b_xy * beta_y0_z
        beta_xz_z = coef3[:, 2:] + b_xy[:, None] * beta_yz_z
        rho = np.clip(sigma_xy_z / np.sqrt(sigma_xx_z * sigma_yy_z), -1.0 + 1e-12, 1.0)
        return {
            "a_draws": a_draws,
            "beta_y0_z": beta_y0_z,
            "beta_yz_z": beta_yz_z,
            "sigma_yy_z": sigma_yy_z,
            "beta_x0_z": beta_x0_z,
            "beta_xz_z": beta_xz_z,
            "sigma_xx_z": sigma_xx_z,
            "sigma_xy_z": sigma_xy_z,
            "rho": rho,
        }


def draw_selected_params(
    y,
    z,
    a,
    rng: np.random.Generator,
    spec: ProxySpec | None = None,
) -> tuple[ConditionalMoments, ProxySpec]:
    """One joint posterior draw of the selected-pattern parameters.

    Returns the drawn conditional moments together with the proxy draw that
    produced them; the proxy draw feeds the non-selected transform.
    """
    model = _SelectedLinearModel(y, z, a)
    if spec is None:
        spec = fit_proxy_linear(y, z, a)
    batch = model.draw_batch(1, rng)
    bound = float(np.sqrt(batch["sigma_xx_z"][0] * batch["sigma_yy_z"][0]))
    moments = ConditionalMoments(
        pattern="selected",
        beta_x0_z=float(batch["beta_x0_z"][0]),
        beta_xz_z=batch["beta_xz_z"][0],
        sigma_xx_z=float(batch["sigma_xx_z"][0]),
        beta_y0_z=float(batch["beta_y0_z"][0]),
        beta_yz_z=batch["beta_yz_z"][0],
        sigma_yy_z=float(batch["sigma_yy_z"][0]),
        sigma_xy_z=float(np.clip(batch["sigma_xy_z"][0], -bound, bound)),
    )
    return moments, spec.with_coeffs(batch["a_draws"][0])


class _NonselectedTransform:
    """Aggregate-to-moments transform for the non-selected pattern, with an
    optional resampling of the aggregates themselves."""

    def __init__(self, nonselected: SummaryStats, spec: ProxySpec):
        self.spec = spec
        self.q = len(spec.a_names)
        self.p = len(spec.z_names)
        self.sub = nonselected.subset(list(spec.a_names) + list(spec.z_names))
        self.count = self.sub.count
        if self.count is not None and self.count <= self.p:
            raise DataError("non-selected count must exceed the predictor count")
        self.df_factor = 1.0 if self.count is None else self.count / (self.count - self.p)
        if self.count is not None:
            # Symmetric square root of cov / n0 for the mean perturbations;
            # eigendecomposition tolerates a PSD-singular covariance.
            w, v = np.linalg.eigh(self.sub.cov / self.count)
            self.mean_sqrt = v * np.sqrt(np.clip(w, 0.0, None))

    def _transform(self, a_draws: np.ndarray, means: np.ndarray, cov: np.ndarray) -> dict:
        """Vectorized moment algebra; ``means``/``cov`` may carry a batch axis."""
        q, p = self.q, self.p
        if means.ndim == 1:
            means = np.broadcast_to(means, (a_draws.shape[0], means.shape[0]))
        if cov.ndim == 2:
            cov = np.broadcast_to(cov, (a_draws.shape[0],) + cov.shape)
        sigma_aa = cov[:, :q, :q]
        sigma_az = cov[:, :q, q:]
        sigma_zz = cov[:, q:, q:]
        sigma_xx = np.einsum("bi,bij,bj->b", a_draws, sigma_aa, a_draws)
        sigma_xz = np.einsum("bi,bij->bj", a_draws, sigma_az)
        x_mean = np.einsum("bi,bi->b", a_draws, means[:, :q])
        z_mean = means[:, q:]
        if p:
            slopes = np.linalg.solve(sigma_zz, sigma_xz[:, :, None])[:, :, 0]
            schur = sigma_xx - np.einsum("bj,bj->b", sigma_xz, slopes)
            intercept = x_mean - np.einsum("bj,bj->b", slopes, z_mean)
        else:
            slopes = np.zeros((a_draws.shape[0], 0))
            schur = sigma_xx
            intercept = x_mean
        return {
            "beta_x0_z": intercept,
            "beta_xz_z": slopes,
            "sigma_xx_z": np.maximum(schur, 0.0) * self.df_factor,
        }

    def fixed_batch(self, a_draws: np.ndarray) -> dict:
        return self._transform(a_draws, self.sub.means, self.sub.cov)

    def resample_batch(self, a_draws: np.ndarray, rng: np.random.Generator) -> dict:
        if self.count is None:
            raise DataError("resampling the aggregates requires their unit count")
        n0 = self.count
        d = len(self.sub.variables)
        try:
            cov_draws = wishart.rvs(
                df=n0 - 1, scale=self.sub.cov / (n0 - 1), size=a_draws.shape[0], random_state=rng
            )
        except np.linalg.LinAlgError as exc:
            raise MomentConsistencyError(
                "aggregate covariance is singular; resampling needs a positive definite matrix"
            ) from exc
        cov_draws = np.asarray(cov_draws).reshape(a_draws.shape[0], d, d)
        noise = rng.standard_normal((a_draws.shape[0], d)) @ self.mean_sqrt.T
        mean_draws = self.sub.means[None, :] + noise
        return self._transform(a_draws, mean_draws, cov_draws)


def draw_nonselected_params(
    nonselected: SummaryStats,
    spec: ProxySpec,
    rng: np.random.Generator,
    mode: str = "fixed",
) -> ConditionalMoments:
    """Non-selected proxy moments for one proxy-coefficient draw.

    ``fixed`` transforms the supplied aggregates deterministically;
    ``resample`` first perturbs them per their sampling distribution
    (covariance from a Wishart with n0 - 1 degrees of freedom, means normal
    around the supplied values with covariance cov / n0).
    """
    if mode == "fixed":
        return conditional_moments_nonselected(spec, nonselected)
    if mode != "resample":
        raise DataError(f"unknown aggregate mode {mode!r} (expected 'fixed' or 'resample')")
    transform = _NonselectedTransform(nonselected, spec)
    out = transform.resample_batch(spec.a_coeffs[None, :], rng)
    return ConditionalMoments(
        pattern="nonselected",
        beta_x0_z=float(out["beta_x0_z"][0]),
        beta_xz_z=out["beta_xz_z"][0],
        sigma_xx_z=float(out["sigma_xx_z"][0]),
    )


def _draw_phi_batch(
    prior: PhiPrior, rho: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, int]:
    """phi draws with rejection of numerically unstable sensitivity factors.

    Returns (phi, g, number of draws that needed at least one redraw).
    Raises UnstableDrawsError when a draw stays unstable after the cap.
    """
    n = rho.shape[0]
    phi = np.asarray(prior.draw(rng, size=n), dtype=float)

    def bad_mask(phi_vals):
        denom = phi_vals * rho + (1.0 - phi_vals)
        return (np.abs(denom) < _DENOM_TOL) | ((phi_vals == 1.0) & (np.abs(rho) < WEAK_PROXY_RHO))

    bad = bad_mask(phi)
    ever_bad = bad.copy()
    attempts = 0
    while np.any(bad):
        attempts += 1
        if attempts > _PHI_REDRAW_CAP:
            raise UnstableDrawsError(
                f"{int(bad.sum())} phi draws remained unstable after {_PHI_REDRAW_CAP} redraws; "
                "the proxy is too weak for this phi prior"
            )
        phi[bad] = np.asarray(prior.draw(rng, size=int(bad.sum())), dtype=float)
        bad = bad_mask(phi)
    g = (phi + (1.0 - phi) * rho) / (phi * rho + (1.0 - phi))
    return phi, g, int(ever_bad.sum())


def _mubns_from_batches(sel: dict, non: dict, g: np.ndarray) -> np.ndarray:
    scale = g * np.sqrt(sel["sigma_yy_z"] / sel["sigma_xx_z"])
    gap0 = sel["beta_x0_z"] - non["beta_x0_z"]
    gapz = sel["beta_xz_z"] - non["beta_xz_z"]
    return np.column_stack([scale * gap0, scale[:, None] * gapz])


def _posterior_mubns_linear(y, z, a, nonselected, prior, n_draws, rng, aggregate_mode, spec):
    model = _SelectedLinearModel(y, z, a)
    transform = _NonselectedTransform(nonselected, spec)
    sel = model.draw_batch(n_draws, rng)
    if aggregate_mode == "resample":
        non = transform.resample_batch(sel["a_draws"], rng)
    else:
        non = transform.fixed_batch(sel["a_draws"])
    phi, g, n_unstable = _draw_phi_batch(prior, sel["rho"], rng)
    return _mubns_from_batches(sel, non, g), phi, sel["rho"], n_unstable


def _posterior_mubns_probit(
    y, z, a, nonselected, prior, n_draws, rng, aggregate_mode, spec, warmup, rescale_mode
):
    _, z, a = _normalize_blocks(np.zeros(len(np.asarray(y))), z, a)
    y01 = np.asarray(y)
    n, p = z.shape
    ones = np.ones(n)
    d_full = _DesignPieces(np.column_stack([ones, z, a]), "latent design")
    d_z = _DesignPieces(np.column_stack([ones, z]), "predictor design")
    transform = _NonselectedTransform(nonselected, spec)

    beta = np.concatenate(([spec.intercept], spec.z_coeffs, spec.a_coeffs))
    draws = np.empty((n_draws, p + 1))
    phis = np.empty(n_draws)
    rhos = np.empty(n_draws)
    n_unstable = 0

    for sweep in range(warmup + n_draws):
        u = draw_latent(y01, d_full.design @ beta, rng)
        coef_full, _ = d_full.lstsq(u)
        # Latent residual variance is fixed at 1 given (Z, A).
        beta = coef_full + d_full.chol @ rng.standard_normal(coef_full.size)
        if sweep < warmup:
            continue
        a_draw = beta[1 + p :]
        x = a @ a_draw

        coef_u_b, sigma_uu_b = d_z.conjugate_draws(u, 1, rng)
        coef_u, sigma_uu = coef_u_b[0], float(sigma_uu_b[0])

        d_uz = _DesignPieces(np.column_stack([ones, u, z]), "X | U, Z design")
        coef_x_b, sigma_xx_uz_b = d_uz.conjugate_draws(x, 1, rng)
        coef_x, sigma_xx_uz = coef_x_b[0], float(sigma_xx_uz_b[0])

        b_xu = coef_x[1]
        sigma_xu_z = b_xu * sigma_uu
        sigma_xx_z = sigma_xx_uz + b_xu**2 * sigma_uu
        beta_x0_z = coef_x[0] + b_xu * coef_u[0]
        beta_xz_z = coef_x[2:] + b_xu * coef_u[1:]
        rho = float(np.clip(sigma_xu_z / np.sqrt(sigma_xx_z * sigma_uu), -1.0 + 1e-12, 1.0))

        # Back to the unit-latent-variance scale of the target probit model.
        u_fit = RegressionFit(
            intercept=float(coef_u[0]),
            slopes=coef_u[1:],
            resid_var=sigma_uu,
            coef_cov=np.zeros((p + 1, p + 1)),
            resid_df=d_z.df,
        )
        beta_u0_z, beta_uz_z = rescale_u_on_z(u_fit, sigma_uu, mode=rescale_mode)

        sel = {
            "beta_y0_z": np.array([beta_u0_z]),
            "beta_yz_z": np.asarray(beta_uz_z)[None, :],
            "sigma_yy_z": np.array([1.0]),
            "beta_x0_z": np.array([beta_x0_z]),
            "beta_xz_z": beta_xz_z[None, :],
            "sigma_xx_z": np.array([sigma_xx_z]),
            "rho": np.array([rho]),
        }
        if aggregate_mode == "resample":
            non = transform.resample_batch(a_draw[None, :], rng)
        else:
            non = transform.fixed_batch(a_draw[None, :])
        phi, g, bad = _draw_phi_batch(prior, sel["rho"], rng)
        n_unstable += bad
        d = sweep - warmup
        draws[d] = _mubns_from_batches(sel, non, g)[0]
        phis[d] = phi[0]
        rhos[d] = rho
    return draws, phis, rhos, n_unstable


def posterior_mubns(
    y,
    z,
    a,
    nonselected: SummaryStats,
    prior: PhiPrior,
    n_draws: int = 1000,
    target: str = "linear",
    seed: int = 0,
    aggregate_mode: str | None = None,
    rescale_mode: str = "sqrt",
    warmup: int = 100,
    z_names: Sequence[str] | None = None,
    a_names: Sequence[str] | None = None,
    nonselection_rate: float | None = None,
) -> PosteriorSummary:
    """Posterior draws of the MUBNS indices for the Y-on-Z coefficients.

    Parameters
    ----------
    y, z, a : selected-sample microdata blocks.
    nonselected : aggregate statistics covering every Z and A variable.
    prior : PhiPrior on the sensitivity parameter.
    target : "linear" for a continuous outcome, "probit" for a binary one.
    seed : integer seed; identical inputs and seed give identical output.
    aggregate_mode : "fixed" or "resample"; defaults to "resample" when the
        aggregates carry a unit count and "fixed" otherwise.
    rescale_mode, warmup : latent-chain controls (ignored for linear).

    Aborts with UnstableDrawsError when more than 10% of the draws hit the
    weak-proxy instability.
    """
    if n_draws < _MIN_DRAWS:
        raise DataError(f"n_draws must be at least {_MIN_DRAWS}")
    if target not in ("linear", "probit"):
        raise DataError(f"unknown target {target!r} (expected 'linear' or 'probit')")
    if aggregate_mode is None:
        aggregate_mode = "resample" if nonselected.count is not None else "fixed"
    if aggregate_mode not in ("fixed", "resample"):
        raise DataError(f"unknown aggregate mode {aggregate_mode!r}")
    rng = np.random.default_rng(seed)

    _, z_arr, a_arr = _normalize_blocks(np.zeros(len(np.asarray(y))), z, a)
    p, q = z_arr.shape[1], a_arr.shape[1]
    z_names = tuple(z_names) if z_names else _default_names("z", p)
    a_names = tuple(a_names) if a_names else _default_names("a", q)

    if target == "linear":
        spec = fit_proxy_linear(y, z_arr, a_arr, z_names=z_names, a_names=a_names)
        draws, phis, rhos, n_unstable = _posterior_mubns_linear(
            y, z_arr, a_arr, nonselected, prior, n_draws, rng, aggregate_mode, spec
        )
    else:
        spec = fit_probit_proxy(y, z_arr, a_arr, z_names=z_names, a_names=a_names)
        draws, phis, rhos, n_unstable = _posterior_mubns_probit(
            y, z_arr, a_arr, nonselected, prior, n_draws, rng, aggregate_mode, spec,
            warmup, rescale_mode,
        )

    if n_unstable > _UNSTABLE_SHARE * n_draws:
        raise UnstableDrawsError(
            f"{n_unstable} of {n_draws} draws hit the weak-proxy instability "
            f"(more than {_UNSTABLE_SHARE:.0%}); the proxy is too weak for this analysis"
        )
    return summarize(
        draws,
        seed=seed,
        phi_draws=phis,
        rho_draws=rhos,
        n_unstable=n_unstable,
        nonselection_rate=nonselection_rate,
        coefficients=("intercept",) + z_names,
    )
