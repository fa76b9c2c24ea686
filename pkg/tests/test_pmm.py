import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    closed_form_phi1_params,
    make_joint_data,
    means_index_oracle,
    random_conditional_pair,
)
from selbias import pmm
from selbias.errors import DataError, WeakProxyError
from selbias.proxy import (
    ConditionalMoments,
    conditional_moments_nonselected,
    conditional_moments_selected,
    fit_proxy_linear,
)
from selbias.statcore import compute_summary, ols_from_micro


class TestGFactor:
    def test_phi_zero_returns_rho(self):
        for rho in (-0.7, 0.1, 0.99):
            assert pmm.g_factor(0.0, rho) == pytest.approx(rho)

    def test_phi_one_inverts_rho(self):
        assert pmm.g_factor(1.0, 0.5) == pytest.approx(2.0)

    def test_midpoint_example(self):
        assert pmm.g_factor(0.5, 0.5) == pytest.approx(1.0)

    def test_weak_proxy_at_phi_one(self):
        with pytest.raises(WeakProxyError, match="too weak"):
            pmm.g_factor(1.0, 0.005)

    def test_phi_bounds(self):
        with pytest.raises(DataError):
            pmm.g_factor(1.2, 0.5)
        with pytest.raises(DataError):
            pmm.g_factor(-0.1, 0.5)

    def test_rho_domain(self):
        with pytest.raises(DataError):
            pmm.g_factor(0.5, -1.0)
        with pytest.raises(DataError):
            pmm.g_factor(0.5, 1.5)

    def test_near_zero_denominator(self):
        # denominator 1 - phi (1 - rho) vanishes at phi = 1 / (1 - rho).
        rho = -1.0 + 1e-6
        phi = 1.0 / (1.0 - rho)
        assert pmm.g_factor(phi + 1e-6, rho)  # nearby value is finite
        with pytest.raises(WeakProxyError, match="unstable"):
            pmm.g_factor(phi, rho)


@settings(max_examples=60, deadline=None)
@given(
    rho=st.floats(0.01, 0.99),
    phi_lo=st.floats(0.0, 1.0),
    phi_hi=st.floats(0.0, 1.0),
)
def test_g_factor_monotone_in_phi(rho, phi_lo, phi_hi):
    lo, hi = sorted((phi_lo, phi_hi))
    assert pmm.g_factor(lo, rho) <= pmm.g_factor(hi, rho) + 1e-12


def test_g_factor_dense_grid_monotone():
    grid = np.linspace(0.0, 1.0, 201)
    for rho in (0.05, 0.3, 0.8, 0.99):
        vals = [pmm.g_factor(p, rho) for p in grid]
        assert np.all(np.diff(vals) >= -1e-12)


class TestNonselectedOutcomeParams:
    @pytest.mark.filterwarnings("ignore:implied non-selected residual variance")
    def test_phi_one_matches_closed_form(self, rng):
        for _ in range(200):
            sel, non = random_conditional_pair(rng)
            got = pmm.nonselected_outcome_params(sel, non, 1.0)
            want = closed_form_phi1_params(sel, non)
            if want[2] < 0:
                continue  # floored case checked separately
            assert got[0] == pytest.approx(want[0], abs=1e-10)
            assert np.allclose(got[1], want[1], atol=1e-10)
            assert got[2] == pytest.approx(want[2], abs=1e-10)

    def test_identical_patterns_identity(self, rng):
        sel, _ = random_conditional_pair(rng, p=2)
        non = ConditionalMoments(
            pattern="nonselected",
            beta_x0_z=sel.beta_x0_z,
            beta_xz_z=sel.beta_xz_z,
            sigma_xx_z=sel.sigma_xx_z,
        )
        for phi in (0.0, 0.25, 0.5, 0.75, 1.0):
            b0, bz, s = pmm.nonselected_outcome_params(sel, non, phi)
            assert b0 == pytest.approx(sel.beta_y0_z)
            assert np.allclose(bz, sel.beta_yz_z)
            assert s == pytest.approx(sel.sigma_yy_z)

    def test_phi_zero_is_regression_calibration(self, rng):
        # g(0) sqrt(sigma_yy/sigma_xx) = sigma_xy / sigma_xx: the adjustment
        # applies the X-on-outcome-scale slope to the proxy-moment gaps.
        for _ in range(50):
            sel, non = random_conditional_pair(rng)
            b0, bz, _ = pmm.nonselected_outcome_params(sel, non, 0.0)
            lam = sel.sigma_xy_z / sel.sigma_xx_z
            assert b0 == pytest.approx(
                sel.beta_y0_z + lam * (non.beta_x0_z - sel.beta_x0_z), abs=1e-10
            )
            assert np.allclose(
                bz, sel.beta_yz_z + lam * (non.beta_xz_z - sel.beta_xz_z), atol=1e-10
            )

    def test_negative_variance_floored_with_warning(self):
        sel = ConditionalMoments(
            pattern="selected",
            beta_x0_z=0.0, beta_xz_z=np.zeros(0), sigma_xx_z=4.0,
            beta_y0_z=0.0, beta_yz_z=np.zeros(0), sigma_yy_z=1.0,
            sigma_xy_z=1.9,
        )
        non = ConditionalMoments(
            pattern="nonselected", beta_x0_z=0.0, beta_xz_z=np.zeros(0), sigma_xx_z=0.01
        )
        with pytest.warns(RuntimeWarning, match="floored"):
            _, _, s = pmm.nonselected_outcome_params(sel, non, 1.0)
        assert s == 0.0

    def test_pattern_validation(self, rng):
        sel, non = random_conditional_pair(rng)
        with pytest.raises(DataError):
            pmm.nonselected_outcome_params(non, sel, 0.5)  # swapped


class TestMubns:
    def test_identical_patterns_zero(self, rng):
        sel, _ = random_conditional_pair(rng, p=3)
        non = ConditionalMoments(
            pattern="nonselected",
            beta_x0_z=sel.beta_x0_z,
            beta_xz_z=sel.beta_xz_z,
            sigma_xx_z=sel.sigma_xx_z,
        )
        for phi in (0.0, 0.5, 1.0):
            assert np.allclose(pmm.mubns(sel, non, phi).mubns, 0.0, atol=1e-12)

    def test_sign_selected_minus_nonselected(self, rng):
        # Positive proxy gap (selected above non-selected) with positive rho
        # must yield a positive index.
        sel, non = random_conditional_pair(rng, p=0)
        sel2 = ConditionalMoments(
            pattern="selected",
            beta_x0_z=1.0, beta_xz_z=np.zeros(0), sigma_xx_z=sel.sigma_xx_z,
            beta_y0_z=sel.beta_y0_z, beta_yz_z=np.zeros(0),
            sigma_yy_z=sel.sigma_yy_z, sigma_xy_z=abs(sel.sigma_xy_z),
        )
        non2 = ConditionalMoments(
            pattern="nonselected", beta_x0_z=0.0, beta_xz_z=np.zeros(0),
            sigma_xx_z=non.sigma_xx_z,
        )
        assert pmm.mubns(sel2, non2, 0.5).mubns_intercept > 0

    @pytest.mark.filterwarnings("ignore:implied non-selected residual variance")
    def test_intercept_only_matches_means_index(self, rng):
        # No predictors: the index must equal the unstandardized means-shift
        # index computed from raw vectors by an independent implementation.
        for _ in range(25):
            n1, n0 = int(rng.integers(30, 200)), int(rng.integers(50, 400))
            a1 = rng.standard_normal((n1, 1)) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1)
            y1 = 1.3 * a1[:, 0] + rng.standard_normal(n1)
            a0 = rng.standard_normal((n0, 1)) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1)
            rate = float(rng.uniform(0.1, 1.0))
            spec = fit_proxy_linear(y1, None, a1, a_names=("a",))
            sel = conditional_moments_selected(y1, None, a1, spec)
            stats = compute_summary(a0, names=("a",), pattern="nonselected")
            non = conditional_moments_nonselected(spec, stats)
            x1 = a1[:, 0] * spec.a_coeffs[0]
            x0_mean = float(a0.mean() * spec.a_coeffs[0])
            for phi in (0.0, 0.3, 0.7, 1.0):
                got = pmm.mub(pmm.mubns(sel, non, phi), rate).mub_intercept
                want = means_index_oracle(y1, x1, x0_mean, phi, rate)
                assert got == pytest.approx(want, abs=1e-10)


class TestMub:
    def test_rate_zero(self, rng):
        sel, non = random_conditional_pair(rng)
        idx = pmm.mub(pmm.mubns(sel, non, 0.5), 0.0)
        assert np.allclose(idx.mub, 0.0)

    def test_rate_one_equals_mubns(self, rng):
        sel, non = random_conditional_pair(rng)
        idx = pmm.mub(pmm.mubns(sel, non, 0.5), 1.0)
        assert np.allclose(idx.mub, idx.mubns)

    def test_rate_out_of_range(self, rng):
        sel, non = random_conditional_pair(rng)
        with pytest.raises(DataError):
            pmm.mub(pmm.mubns(sel, non, 0.5), 1.5)

    def test_componentwise_scaling(self, rng):
        sel, non = random_conditional_pair(rng, p=2)
        base = pmm.mubns(sel, non, 0.3)
        idx = pmm.mub(base, 0.4)
        assert np.allclose(idx.mub, 0.4 * base.mubns)

    def test_index_set_invariant(self):
        with pytest.raises(DataError):
            pmm.BiasIndexSet(
                phi=0.5, mubns_intercept=1.0, mubns_slopes=np.zeros(1),
                sigma_yy_z_0=1.0, mub_intercept=0.5, mub_slopes=np.zeros(1),
                nonselection_rate=None,
            )


class TestAdjustedCoefficients:
    def test_zero_mub_unchanged(self, rng):
        y, z, a = make_joint_data(rng, n=200)
        fit = ols_from_micro(y, np.column_stack([np.ones(len(y)), z]))
        idx = pmm.BiasIndexSet(
            phi=0.5, mubns_intercept=0.0, mubns_slopes=np.zeros(2), sigma_yy_z_0=1.0,
            mub_intercept=0.0, mub_slopes=np.zeros(2), nonselection_rate=0.9,
        )
        intercept, slopes = pmm.adjusted_coefficients(fit, idx)
        assert intercept == fit.intercept
        assert np.allclose(slopes, fit.slopes)

    def test_subtraction(self, rng):
        y, z, a = make_joint_data(rng, n=200)
        fit = ols_from_micro(y, np.column_stack([np.ones(len(y)), z]))
        idx = pmm.BiasIndexSet(
            phi=0.5, mubns_intercept=2.0, mubns_slopes=np.array([1.0, -1.0]),
            sigma_yy_z_0=1.0, mub_intercept=2.0, mub_slopes=np.array([1.0, -1.0]),
            nonselection_rate=1.0,
        )
        intercept, slopes = pmm.adjusted_coefficients(fit, idx)
        assert intercept == pytest.approx(fit.intercept - 2.0)
        assert np.allclose(slopes, fit.slopes - np.array([1.0, -1.0]))

    def test_requires_mub(self, rng):
        sel, non = random_conditional_pair(rng, p=1)
        y, z, a = make_joint_data(rng, n=100, p=1)
        fit = ols_from_micro(y, np.column_stack([np.ones(len(y)), z]))
        with pytest.raises(DataError, match="rate"):
            pmm.adjusted_coefficients(fit, pmm.mubns(sel, non, 0.5))


class TestMleInterval:
    def test_identical_patterns_degenerate(self, rng):
        sel, _ = random_conditional_pair(rng, p=1)
        non = ConditionalMoments(
            pattern="nonselected", beta_x0_z=sel.beta_x0_z,
            beta_xz_z=sel.beta_xz_z, sigma_xx_z=sel.sigma_xx_z,
        )
        assert np.allclose(pmm.mle_interval(sel, non), 0.0, atol=1e-12)

    @pytest.mark.filterwarnings("ignore:implied non-selected residual variance")
    def test_perfect_proxy_zero_width(self):
        sel = ConditionalMoments(
            pattern="selected",
            beta_x0_z=1.0, beta_xz_z=np.array([0.5]), sigma_xx_z=2.0,
            beta_y0_z=0.3, beta_yz_z=np.array([1.0]), sigma_yy_z=3.0,
            sigma_xy_z=np.sqrt(6.0),  # rho exactly 1
        )
        non = ConditionalMoments(
            pattern="nonselected", beta_x0_z=0.2, beta_xz_z=np.array([0.1]), sigma_xx_z=2.5
        )
        interval = pmm.mle_interval(sel, non)
        assert np.allclose(interval[:, 0], interval[:, 1], atol=1e-10)

    @pytest.mark.filterwarnings("ignore:implied non-selected residual variance")
    def test_endpoints_match_mubns(self, rng):
        sel, non = random_conditional_pair(rng, p=2)
        interval = pmm.mle_interval(sel, non)
        lo = pmm.mubns(sel, non, 0.0).mubns
        hi = pmm.mubns(sel, non, 1.0).mubns
        assert np.allclose(interval[:, 0], np.minimum(lo, hi))
        assert np.allclose(interval[:, 1], np.maximum(lo, hi))

    def test_weak_proxy_propagates(self, rng):
        sel, non = random_conditional_pair(rng, p=1, rho_min=0.001)
        weak = ConditionalMoments(
            pattern="selected",
            beta_x0_z=sel.beta_x0_z, beta_xz_z=sel.beta_xz_z, sigma_xx_z=1.0,
            beta_y0_z=sel.beta_y0_z, beta_yz_z=sel.beta_yz_z, sigma_yy_z=1.0,
            sigma_xy_z=0.001,
        )
        with pytest.raises(WeakProxyError):
            pmm.mle_interval(weak, non)


class TestPipelineProperties:
    def _pipeline_indices(self, y, z, a, phi):
        spec = fit_proxy_linear(y, z, a)
        sel = conditional_moments_selected(y, z, a, spec)
        stats = compute_summary(
            np.column_stack([a + 0.5, z * 1.1]), names=spec.a_names + spec.z_names
        )
        non = conditional_moments_nonselected(spec, stats)
        return pmm.mubns(sel, non, phi).mubns

    def test_scale_equivariance_in_y(self, rng):
        y, z, a = make_joint_data(rng, n=400)
        for phi in (0.0, 0.5, 1.0):
            base = self._pipeline_indices(y, z, a, phi)
            scaled = self._pipeline_indices(3.0 * y, z, a, phi)
            assert np.allclose(scaled, 3.0 * base, atol=1e-8 * max(1.0, np.abs(base).max()))

    def test_zero_gap_nullity(self, rng):
        sel, _ = random_conditional_pair(rng, p=2)
        non = ConditionalMoments(
            pattern="nonselected",
            beta_x0_z=sel.beta_x0_z,
            beta_xz_z=sel.beta_xz_z,
            sigma_xx_z=sel.sigma_xx_z * 1.7,  # variance may differ
        )
        for phi in np.linspace(0, 1, 11):
            assert np.allclose(pmm.mubns(sel, non, float(phi)).mubns, 0.0, atol=1e-12)

    def test_total_probability_identity(self):
        # Exact matrix form: b_sel - b_all = (X'X)_all^-1 (X'X)_non (b_sel - b_non)
        # for any realized split; with selection probability constant in Z the
        # matrix weight collapses to roughly Pr(S=0) * I.
        from selbias.simstudy import (
            PopulationConfig,
            SelectionConfig,
            apply_selection,
            calibrate_gamma0,
            generate_population,
        )

        rng = np.random.default_rng(5)
        cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.4)
        pop = generate_population(cfg, rng)
        sel_cfg = SelectionConfig(
            gamma_y=0.0, gamma_z1=0.0, gamma_z2=0.0, gamma_a=0.0, target_fraction=0.3
        )
        g0 = calibrate_gamma0(pop, sel_cfg)
        s = apply_selection(pop, sel_cfg, g0, rng)
        y = pop[:, 0]
        X = np.column_stack([np.ones(len(y)), pop[:, 1:3]])
        b_sel = ols_from_micro(y[s], X[s]).coefficients
        b_non = ols_from_micro(y[~s], X[~s]).coefficients
        b_all = ols_from_micro(y, X).coefficients

        xtx_all = X.T @ X
        xtx_non = X[~s].T @ X[~s]
        lhs = b_sel - b_all
        rhs = np.linalg.solve(xtx_all, xtx_non @ (b_sel - b_non))
        assert np.allclose(lhs, rhs, atol=1e-8)
        # Constant selection probability: the matrix weight is close to the
        # scalar non-selection rate.
        rate = (~s).mean()
        assert np.allclose(lhs, rate * (b_sel - b_non), atol=0.05 * max(np.abs(lhs).max(), 0.1))
