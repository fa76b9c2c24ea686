import math

import numpy as np
import pytest
from scipy.special import expit, logit

from conftest import naive_spearman
from selbias import simstudy
from selbias.errors import DataError
from selbias.simstudy import (
    BayesEval,
    EvalOptions,
    PopulationConfig,
    SelectionConfig,
    apply_selection,
    calibrate_gamma0,
    desk_grid,
    evaluate_cell,
    full_grid,
    generate_population,
    iter_metric_rows,
    run_grid,
    selection_probabilities,
    sigma_ya_from_conditional,
)


class TestSigmaYa:
    def test_worked_example(self):
        # rho_y1 = rho_y2 = rho_1a = 0.2, cond_cor = 0.5:
        # 0.5 * sqrt(3.68 * 0.96) + 0.08
        got = sigma_ya_from_conditional(0.2, 0.2, 0.2, 0.5)
        assert got == pytest.approx(0.5 * math.sqrt(3.68 * 0.96) + 0.08, abs=1e-12)
        assert got == pytest.approx(1.0198, abs=5e-4)

    def test_zero_conditional_and_zero_rho_y1(self):
        assert sigma_ya_from_conditional(0.0, 0.3, 0.4, 0.0) == pytest.approx(0.0)

    def test_monte_carlo_conditional_correlation(self):
        # The derived sigma_ya must reproduce the requested conditional
        # correlation empirically.
        for rho_1a, cond_cor in ((0.0, 0.5), (0.4, 0.8), (0.6, 0.2)):
            cfg = PopulationConfig(
                rho_y1=0.2, rho_y2=0.4, cond_cor_ya=cond_cor, rho_1a=rho_1a, n_units=1_000_000
            )
            pop = generate_population(cfg, np.random.default_rng(123))
            design = np.column_stack([np.ones(len(pop)), pop[:, 1:3]])
            coef_y, *_ = np.linalg.lstsq(design, pop[:, 0], rcond=None)
            coef_a, *_ = np.linalg.lstsq(design, pop[:, 3], rcond=None)
            ry = pop[:, 0] - design @ coef_y
            ra = pop[:, 3] - design @ coef_a
            got = np.corrcoef(ry, ra)[0, 1]
            assert got == pytest.approx(cond_cor, abs=0.01)

    def test_nonpositive_conditional_variance(self):
        with pytest.raises(DataError):
            sigma_ya_from_conditional(0.8, 0.7, 0.2, 0.5)


class TestPopulationConfig:
    def test_all_grid_configs_valid(self):
        for r1 in simstudy.RHO_LEVELS:
            for r2 in simstudy.RHO_LEVELS:
                for cc in simstudy.COND_COR_LEVELS:
                    for ra in simstudy.RHO_LEVELS:
                        PopulationConfig(rho_y1=r1, rho_y2=r2, cond_cor_ya=cc, rho_1a=ra)

    def test_invalid_config_rejected(self):
        with pytest.raises(DataError):
            PopulationConfig(rho_y1=0.72, rho_y2=0.7, cond_cor_ya=0.5, rho_1a=0.2)

    def test_covariance_structure(self):
        cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.6)
        cov = cfg.covariance()
        assert cov[0, 0] == 4.0
        assert cov[1, 1] == cov[2, 2] == cov[3, 3] == 1.0
        assert cov[0, 1] == 0.8 and cov[0, 2] == 0.4
        assert cov[1, 2] == 0.0 and cov[2, 3] == 0.0
        assert cov[1, 3] == 0.6
        assert np.allclose(cov, cov.T)


class TestGeneratePopulation:
    def test_moments_match_target(self):
        cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.6, cond_cor_ya=0.8, rho_1a=0.4,
                               n_units=1_000_000)
        pop = generate_population(cfg, np.random.default_rng(7))
        emp = np.cov(pop.T)
        assert np.all(np.abs(emp - cfg.covariance()) < 0.01)

    def test_mean_within_clt_band(self):
        cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.2, rho_1a=0.2)
        pop = generate_population(cfg, np.random.default_rng(8))
        n = cfg.n_units
        assert abs(pop[:, 0].mean() - 10.0) < 4 * 2.0 / math.sqrt(n)
        emp_cov_z = float(np.cov(pop[:, 1], pop[:, 2])[0, 1])
        assert abs(emp_cov_z) < 4 / math.sqrt(n)


class TestCalibration:
    def test_null_coefficients_give_logit(self):
        cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.2)
        pop = generate_population(cfg, np.random.default_rng(9))
        sel = SelectionConfig(gamma_y=0.0, gamma_z1=0.0, gamma_z2=0.0, gamma_a=0.0)
        assert calibrate_gamma0(pop, sel) == pytest.approx(logit(0.05), abs=1e-6)
        assert logit(0.05) == pytest.approx(-2.9444, abs=1e-4)

    def test_ten_percent_target(self):
        cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.2)
        pop = generate_population(cfg, np.random.default_rng(10))
        sel = SelectionConfig(
            gamma_y=0.0, gamma_z1=0.0, gamma_z2=0.0, gamma_a=0.0, target_fraction=0.10
        )
        assert calibrate_gamma0(pop, sel) == pytest.approx(logit(0.10), abs=1e-6)
        assert logit(0.10) == pytest.approx(-2.1972, abs=1e-4)

    def test_residual_below_tolerance(self):
        cfg = PopulationConfig(rho_y1=0.6, rho_y2=0.4, cond_cor_ya=0.8, rho_1a=0.6)
        pop = generate_population(cfg, np.random.default_rng(11))
        sel = SelectionConfig(
            gamma_y=math.log(2), gamma_z1=math.log(2), gamma_z2=math.log(1.1), gamma_a=math.log(2)
        )
        g0 = calibrate_gamma0(pop, sel)
        mean_prob = float(expit(g0 + sel.linear_term(pop)).mean())
        assert abs(mean_prob - 0.05) < 1e-6


class TestApplySelection:
    def test_realized_count_band(self):
        cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.4, cond_cor_ya=0.5, rho_1a=0.4)
        rng = np.random.default_rng(12)
        pop = generate_population(cfg, rng)
        sel = SelectionConfig(
            gamma_y=math.log(1.1), gamma_z1=math.log(1.1), gamma_z2=math.log(1.1),
            gamma_a=math.log(1.1),
        )
        g0 = calibrate_gamma0(pop, sel)
        s = apply_selection(pop, sel, g0, rng)
        n = cfg.n_units
        band = 4 * math.sqrt(n * 0.05 * 0.95)
        assert abs(s.sum() - 0.05 * n) < band
        # realized fraction close to target (the calibration invariant)
        assert abs(s.mean() - 0.05) < 0.002 + band / n

    def test_outcome_selection_shifts_selected_mean(self):
        cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.4, cond_cor_ya=0.5, rho_1a=0.4)
        sel = SelectionConfig(
            gamma_y=math.log(2), gamma_z1=math.log(1.1), gamma_z2=math.log(1.1),
            gamma_a=math.log(1.1),
        )
        higher = 0
        for rep in range(5):
            rng = np.random.default_rng(100 + rep)
            pop = generate_population(cfg, rng)
            g0 = calibrate_gamma0(pop, sel)
            s = apply_selection(pop, sel, g0, rng)
            higher += pop[s, 0].mean() > pop[~s, 0].mean()
        assert higher == 5

    def test_seed_reproducibility(self):
        cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.2)
        sel = SelectionConfig(gamma_y=0.0, gamma_z1=0.0, gamma_z2=0.0, gamma_a=0.0)
        pop = generate_population(cfg, np.random.default_rng(13))
        g0 = calibrate_gamma0(pop, sel)
        s1 = apply_selection(pop, sel, g0, np.random.default_rng(55))
        s2 = apply_selection(pop, sel, g0, np.random.default_rng(55))
        assert np.array_equal(s1, s2)

    def test_probabilities_monotone_in_gamma0(self):
        cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.5, rho_1a=0.2)
        pop = generate_population(cfg, np.random.default_rng(14))
        sel = SelectionConfig(gamma_y=0.1, gamma_z1=0.1, gamma_z2=0.1, gamma_a=0.1)
        p1 = selection_probabilities(pop, sel, -3.0).mean()
        p2 = selection_probabilities(pop, sel, -2.0).mean()
        assert p2 > p1


class TestGrids:
    def test_full_grid_size(self):
        cells = full_grid()
        assert len(cells) == 1944
        # scatter metric row arithmetic: 3 coefficients x 3 phi values per cell
        assert len(cells) * 3 * 3 == 17_496

    def test_desk_grid_size(self):
        assert len(desk_grid()) == 96

    def test_grid_configs_unique(self):
        cells = full_grid()
        assert len(set(cells)) == len(cells)


@pytest.fixture(scope="module")
def small_result():
    pop_cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.4, cond_cor_ya=0.8, rho_1a=0.4)
    sel_cfg = SelectionConfig(
        gamma_y=math.log(2), gamma_z1=math.log(1.1), gamma_z2=math.log(1.1),
        gamma_a=math.log(1.1),
    )
    return evaluate_cell(pop_cfg, sel_cfg, n_reps=6, seed=2024,
                         options=EvalOptions(bayes=BayesEval(n_draws=120)))


class TestEvaluateCell:
    def test_shapes_and_status(self, small_result):
        r = small_result
        assert r.ok.all()
        assert r.status == "ok"
        assert r.true_diff.shape == (6, 3)
        assert r.mubns.shape == (6, 3, 3)
        assert set(r.bayes) == {"uniform", "discrete"}
        assert r.mle_cover.shape == (6, 3)

    def test_mubns_tracks_truth_direction(self, small_result):
        # Strong outcome selection: intercept difference is positive and the
        # index agrees in sign for every replicate at every phi.
        r = small_result
        assert np.all(r.true_diff[:, 0] > 0)
        assert np.all(r.mubns[:, :, 0] > 0)

    def test_metric_rows_structure(self, small_result):
        rows = list(iter_metric_rows(small_result))
        metrics = {row["metric"] for row in rows}
        assert {"n_reps", "n_failed", "median_mubns", "spearman_diff", "spearman_bias",
                "mle_coverage", "mle_median_width", "bayes_uniform_coverage",
                "bayes_discrete_median_width"} <= metrics
        scatter = [r for r in rows if r["metric"] == "median_mubns"]
        assert len(scatter) == 9  # 3 coefficients x 3 phi values
        for row in rows:
            assert row["cell_id"] == small_result.cell_id

    def test_determinism_across_runs(self):
        pop_cfg = PopulationConfig(rho_y1=0.2, rho_y2=0.2, cond_cor_ya=0.8, rho_1a=0.2)
        sel_cfg = SelectionConfig(
            gamma_y=0.0, gamma_z1=math.log(1.1), gamma_z2=math.log(1.1), gamma_a=math.log(1.1)
        )
        r1 = evaluate_cell(pop_cfg, sel_cfg, n_reps=3, seed=7)
        r2 = evaluate_cell(pop_cfg, sel_cfg, n_reps=3, seed=7)
        assert np.array_equal(r1.mubns, r2.mubns)
        assert np.array_equal(r1.true_diff, r2.true_diff)

    def test_ignorable_selection_unbiased(self):
        # Selection on Z only: coefficient differences vanish in expectation.
        pop_cfg = PopulationConfig(rho_y1=0.4, rho_y2=0.4, cond_cor_ya=0.5, rho_1a=0.4)
        sel_cfg = SelectionConfig(
            gamma_y=0.0, gamma_z1=math.log(2), gamma_z2=math.log(2), gamma_a=0.0
        )
        res = evaluate_cell(pop_cfg, sel_cfg, n_reps=150, seed=31)
        diffs = res.pooled("true_diff")
        mean = diffs.mean(axis=0)
        band = 4 * diffs.std(axis=0) / math.sqrt(len(diffs))
        assert np.all(np.abs(mean) < band)


class TestRunGrid:
    def test_matches_sequential_and_parallel(self):
        cells = desk_grid()[:3]
        opts = EvalOptions()
        seq = run_grid(cells, n_reps=2, seed=5, options=opts, jobs=1)
        par = run_grid(cells, n_reps=2, seed=5, options=opts, jobs=2)
        for a, b in zip(seq, par):
            assert a.cell_id == b.cell_id
            assert np.array_equal(a.mubns, b.mubns)

    def test_per_cell_options(self):
        cells = desk_grid()[:2]
        opts = [EvalOptions(), EvalOptions(bayes=BayesEval(n_draws=100, priors=("uniform",)))]
        results = run_grid(cells, n_reps=2, seed=5, options=opts)
        assert results[0].bayes == {}
        assert set(results[1].bayes) == {"uniform"}


class TestSpearmanOracle:
    def test_matches_naive_implementation(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            x = rng.standard_normal(25)
            y = 0.5 * x + rng.standard_normal(25)
            assert simstudy._spearman(x, y) == pytest.approx(naive_spearman(x, y), abs=1e-12)

    def test_handles_ties(self):
        x = np.array([1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 8.0])
        y = np.array([0.3, 1.0, 0.9, 2.0, 2.0, 2.5, 2.4, 4.0])
        assert simstudy._spearman(x, y) == pytest.approx(naive_spearman(x, y), abs=1e-12)

    def test_constant_input_nan(self):
        assert math.isnan(simstudy._spearman(np.ones(10), np.arange(10.0)))
