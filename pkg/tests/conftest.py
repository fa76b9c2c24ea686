"""Shared generators and independent oracles for the test suite.

Oracles here deliberately avoid the library code paths they check: they are
plain restatements of the algebra (normal equations, residualized
correlations, closed forms on the phi = 1 boundary, naive rank statistics).
"""

import numpy as np
import pytest

from selbias.proxy import ConditionalMoments


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def make_joint_data(rng, n=400, p=2, q=2, rho_strength=0.7, noise=1.0):
    """Correlated (y, z, a) blocks with a genuinely informative auxiliary."""
    z = rng.standard_normal((n, p))
    shared = rng.standard_normal((n, 1))
    a = 0.6 * shared + rng.standard_normal((n, q)) * 0.8
    if p:
        a = a + 0.3 * z[:, :1]
    beta_z = rng.uniform(-1.5, 1.5, size=p)
    beta_a = rng.uniform(0.5, 1.5, size=q) * rho_strength
    y = 1.0 + z @ beta_z + a @ beta_a + noise * rng.standard_normal(n)
    return y, z, a


def random_conditional_pair(rng, p=None, rho_min=0.05):
    """Random valid (selected, nonselected) conditional-moment pair."""
    if p is None:
        p = int(rng.integers(0, 4))
    sigma_xx = float(rng.uniform(0.1, 10.0))
    sigma_yy = float(rng.uniform(0.1, 10.0))
    sign = -1.0 if rng.random() < 0.5 else 1.0
    rho = sign * float(rng.uniform(rho_min, 0.98))
    sel = ConditionalMoments(
        pattern="selected",
        beta_x0_z=float(rng.uniform(-5, 5)),
        beta_xz_z=rng.uniform(-5, 5, size=p),
        sigma_xx_z=sigma_xx,
        beta_y0_z=float(rng.uniform(-5, 5)),
        beta_yz_z=rng.uniform(-5, 5, size=p),
        sigma_yy_z=sigma_yy,
        sigma_xy_z=rho * np.sqrt(sigma_xx * sigma_yy),
    )
    non = ConditionalMoments(
        pattern="nonselected",
        beta_x0_z=float(rng.uniform(-5, 5)),
        beta_xz_z=rng.uniform(-5, 5, size=p),
        sigma_xx_z=float(rng.uniform(0.1, 10.0)),
    )
    return sel, non


def closed_form_phi1_params(sel, non):
    """Non-selected outcome parameters on the phi = 1 boundary, written the
    long way: through the coefficient of Y in the X-on-(Y, Z) regression,
    b = sigma_xy_z / sigma_yy_z."""
    b = sel.sigma_xy_z / sel.sigma_yy_z
    beta_y0 = sel.beta_y0_z + (non.beta_x0_z - sel.beta_x0_z) / b
    beta_yz = sel.beta_yz_z + (non.beta_xz_z - sel.beta_xz_z) / b
    sigma_yy = sel.sigma_yy_z + (non.sigma_xx_z - sel.sigma_xx_z) / b**2
    return beta_y0, beta_yz, sigma_yy


def means_index_oracle(y_sel, x_sel, x_nonsel_mean, phi, rate):
    """Unstandardized means-shift index, computed from raw vectors only.

    With no predictors the per-coefficient bias index reduces to
    rate * g(phi, r) * (s_y / s_x) * (mean(x_sel) - mean(x_nonsel)),
    where r is the plain correlation of x and y in the selected sample.
    """
    y_sel = np.asarray(y_sel, dtype=float)
    x_sel = np.asarray(x_sel, dtype=float)
    s_y = np.std(y_sel, ddof=1)
    s_x = np.std(x_sel, ddof=1)
    r = np.corrcoef(x_sel, y_sel)[0, 1]
    g = (phi + (1 - phi) * r) / (phi * r + (1 - phi))
    return rate * g * (s_y / s_x) * (x_sel.mean() - x_nonsel_mean)


def naive_spearman(x, y):
    """Rank correlation with average ranks, computed with explicit loops."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def ranks(v):
        out = np.empty(len(v))
        for i, vi in enumerate(v):
            less = sum(1 for u in v if u < vi)
            equal = sum(1 for u in v if u == vi)
            out[i] = less + (equal + 1) / 2.0
        return out

    rx, ry = ranks(x), ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def normal_equations_fit(y, X):
    """Brute-force least squares through the normal equations."""
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ coef
    return coef, float(resid @ resid)
