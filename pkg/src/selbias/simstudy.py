"""Monte Carlo harness for the selection-bias indices.

Each cell of the experiment crosses one population distribution with one
logistic selection mechanism.  A replicate generates a finite population of
(Y, Z1, Z2, A), calibrates the selection intercept to the target selection
fraction, draws the selection indicators, and then compares the MUBNS
indices computed from the selected microdata plus non-selected aggregates
against the realized truth: the coefficient differences between the
selected and non-selected fits and the bias against the whole-population
fit.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import spearmanr

from . import pmm
from .bayes import PhiPrior, posterior_mubns
from .errors import (
    ConvergenceError,
    DataError,
    MomentConsistencyError,
    RankDeficiencyError,
    UnstableDrawsError,
    WeakProxyError,
)
from .proxy import conditional_moments_nonselected, conditional_moments_selected, fit_proxy_linear
from .statcore import compute_summary, ols_from_micro

RHO_LEVELS = (0.2, 0.4, 0.6)
COND_COR_LEVELS = (0.2, 0.5, 0.8)
GAMMA_Y_LEVELS = (0.0, math.log(1.1), math.log(2.0))
GAMMA_LEVELS = (math.log(1.1), math.log(2.0))

COEF_NAMES = ("intercept", "z1", "z2")
VAR_NAMES = ("y", "z1", "z2", "a")

_REPLICATE_ERRORS = (
    WeakProxyError,
    UnstableDrawsError,
    DataError,
    MomentConsistencyError,
    RankDeficiencyError,
    ConvergenceError,
)


def sigma_ya_from_conditional(rho_y1: float, rho_y2: float, rho_1a: float, cond_cor: float) -> float:
    """Covariance of Y and A that yields Cor(Y, A | Z1, Z2) = cond_cor.

    With Var(Y) = 4, Var(Zj) = Var(A) = 1, Cov(Y, Zj) = 2 rho_yj,
    Cov(A, Z1) = rho_1a and Cov(A, Z2) = 0, the conditional (on Z) variances
    are 4 - 4 rho_y1^2 - 4 rho_y2^2 and 1 - rho_1a^2, and the conditional
    covariance is sigma_ya - 2 rho_y1 rho_1a.
    """
    var_y_z = 4.0 - 4.0 * rho_y1**2 - 4.0 * rho_y2**2
    var_a_z = 1.0 - rho_1a**2
    if var_y_z <= 0.0 or var_a_z <= 0.0:
        raise DataError(
            "implied conditional variances are not positive "
            f"(Y|Z: {var_y_z:g}, A|Z: {var_a_z:g})"
        )
    return cond_cor * math.sqrt(var_y_z * var_a_z) + 2.0 * rho_y1 * rho_1a


@dataclass(frozen=True)
class PopulationConfig:
    """One population distribution of (Y, Z1, Z2, A)."""

    rho_y1: float
    rho_y2: float
    cond_cor_ya: float
    rho_1a: float
    n_units: int = 10_000

    def __post_init__(self):
        if self.n_units <= 0:
            raise DataError("population size must be positive")
        cov = self.covariance()
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DataError(f"population covariance is not positive definite: {self}") from None

    def covariance(self) -> np.ndarray:
        sigma_ya = sigma_ya_from_conditional(
            self.rho_y1, self.rho_y2, self.rho_1a, self.cond_cor_ya
        )
        return np.array(
            [
                [4.0, 2.0 * self.rho_y1, 2.0 * self.rho_y2, sigma_ya],
                [2.0 * self.rho_y1, 1.0, 0.0, self.rho_1a],
                [2.0 * self.rho_y2, 0.0, 1.0, 0.0],
                [sigma_ya, self.rho_1a, 0.0, 1.0],
            ]
        )

    @property
    def mean(self) -> np.ndarray:
        return np.array([10.0, 0.0, 0.0, 0.0])


def generate_population(cfg: PopulationConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw the finite population, columns (Y, Z1, Z2, A)."""
    chol = np.linalg.cholesky(cfg.covariance())
    return cfg.mean + rng.standard_normal((cfg.n_units, 4)) @ chol.T


@dataclass(frozen=True)
class SelectionConfig:
    """Logistic selection mechanism; the intercept is calibrated per
    realized population to hit the target selection fraction."""

    gamma_y: float
    gamma_z1: float
    gamma_z2: float
    gamma_a: float
    target_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.target_fraction < 1.0:
            raise DataError("target selection fraction must lie in (0, 1)")

    def linear_term(self, pop: np.ndarray) -> np.ndarray:
        return pop @ np.array([self.gamma_y, self.gamma_z1, self.gamma_z2, self.gamma_a])


def calibrate_gamma0(pop: np.ndarray, sel: SelectionConfig, tol: float = 1e-9) -> float:
    """Intercept for which the mean selection probability over the realized
    population equals the target fraction, found by bisection (the mean is
    strictly increasing in the intercept)."""
    eta = sel.linear_term(pop)
    target = sel.target_fraction

    def excess(g0: float) -> float:
        return float(expit(g0 + eta).mean()) - target

    lo, hi = -80.0, 80.0
    f_lo, f_hi = excess(lo), excess(hi)
    if not (f_lo < 0.0 < f_hi):
        raise AssertionError("bisection bracket failed; cannot happen for a logistic model")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        if abs(f_mid) <= tol:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def selection_probabilities(pop: np.ndarray, sel: SelectionConfig, gamma0: float) -> np.ndarray:
    return expit(gamma0 + sel.linear_term(pop))


def apply_selection(
    pop: np.ndarray, sel: SelectionConfig, gamma0: float, rng: np.random.Generator
) -> np.ndarray:
    """Bernoulli selection indicators at the per-unit probabilities."""
    probs = selection_probabilities(pop, sel, gamma0)
    return rng.random(pop.shape[0]) < probs


@dataclass(frozen=True)
class BayesEval:
    """Bayesian interval evaluation inside the grid."""

    n_draws: int = 500
    priors: tuple[str, ...] = ("uniform", "discrete")
    aggregate_mode: str = "resample"


@dataclass(frozen=True)
class EvalOptions:
    phi_grid: tuple[float, ...] = (0.0, 0.5, 1.0)
    bayes: BayesEval | None = None
    min_selected: int = 20


@dataclass
class SimResult:
    """Replicate-level records and cell-level aggregates for one grid cell."""

    cell_id: str
    pop: PopulationConfig
    sel: SelectionConfig
    phi_grid: tuple[float, ...]
    n_reps: int
    ok: np.ndarray                      # (reps,) bool
    failures: list[str]
    selected_counts: np.ndarray         # (reps,)
    true_diff: np.ndarray               # (reps, 3)
    true_bias: np.ndarray               # (reps, 3)
    mubns: np.ndarray                   # (reps, n_phi, 3)
    mle_lo: np.ndarray                  # (reps, 3)
    mle_hi: np.ndarray                  # (reps, 3)
    bayes: dict = field(default_factory=dict)
    # bayes[prior] holds "cover", "width", "median" arrays of shape (reps, 3)

    @property
    def n_failed(self) -> int:
        return int(self.n_reps - self.ok.sum())

    @property
    def status(self) -> str:
        return "failed" if self.n_failed > 0.2 * self.n_reps else "ok"

    @property
    def mle_cover(self) -> np.ndarray:
        return (self.mle_lo <= self.true_diff) & (self.true_diff <= self.mle_hi)

    def pooled(self, name: str) -> np.ndarray:
        """Replicate-level array restricted to successful replicates."""
        return getattr(self, name)[self.ok]


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 3 or np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    return float(spearmanr(x, y).statistic)


def evaluate_cell(
    pop_cfg: PopulationConfig,
    sel_cfg: SelectionConfig,
    n_reps: int,
    seed,
    options: EvalOptions | None = None,
    cell_id: str = "cell",
) -> SimResult:
    """Run all replicates of one (population, selection) cell.

    ``seed`` may be an integer or a numpy SeedSequence; replicates use
    independently spawned streams, so results do not depend on execution
    order.  Replicate-level failures (for example a weak-proxy abort at
    phi = 1) are recorded, not fatal.
    """
    options = options or EvalOptions()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_reps)
    phi_grid = tuple(options.phi_grid)
    n_phi = len(phi_grid)

    ok = np.zeros(n_reps, dtype=bool)
    failures: list[str] = []
    selected_counts = np.zeros(n_reps, dtype=int)
    true_diff = np.full((n_reps, 3), np.nan)
    true_bias = np.full((n_reps, 3), np.nan)
    mubns_arr = np.full((n_reps, n_phi, 3), np.nan)
    mle_lo = np.full((n_reps, 3), np.nan)
    mle_hi = np.full((n_reps, 3), np.nan)
    bayes_out = {
        prior: {
            "cover": np.zeros((n_reps, 3), dtype=bool),
            "width": np.full((n_reps, 3), np.nan),
            "median": np.full((n_reps, 3), np.nan),
        }
        for prior in (options.bayes.priors if options.bayes else ())
    }

    for r in range(n_reps):
        rng = np.random.default_rng(children[r])
        try:
            rep = _run_replicate(pop_cfg, sel_cfg, options, rng)
        except _REPLICATE_ERRORS as exc:
            failures.append(f"rep {r}: {exc}")
            continue
        ok[r] = True
        selected_counts[r] = rep["n_selected"]
        true_diff[r] = rep["true_diff"]
        true_bias[r] = rep["true_bias"]
        mubns_arr[r] = rep["mubns"]
        mle_lo[r] = rep["mle"][:, 0]
        mle_hi[r] = rep["mle"][:, 1]
        for prior, res in rep["bayes"].items():
            bayes_out[prior]["cover"][r] = res["cover"]
            bayes_out[prior]["width"][r] = res["width"]
            bayes_out[prior]["median"][r] = res["median"]

    return SimResult(
        cell_id=cell_id,
        pop=pop_cfg,
        sel=sel_cfg,
        phi_grid=phi_grid,
        n_reps=n_reps,
        ok=ok,
        failures=failures,
        selected_counts=selected_counts,
        true_diff=true_diff,
        true_bias=true_bias,
        mubns=mubns_arr,
        mle_lo=mle_lo,
        mle_hi=mle_hi,
        bayes=bayes_out,
    )


def _run_replicate(pop_cfg, sel_cfg, options, rng):
    pop = generate_population(pop_cfg, rng)
    gamma0 = calibrate_gamma0(pop, sel_cfg)
    selected = apply_selection(pop, sel_cfg, gamma0, rng)
    n_sel = int(selected.sum())
    if n_sel < options.min_selected or pop.shape[0] - n_sel < options.min_selected:
        raise DataError(f"degenerate selection split ({n_sel} selected)")

    y, z, a = pop[:, 0], pop[:, 1:3], pop[:, 3:4]
    design = np.column_stack([np.ones(pop.shape[0]), z])
    fit_sel = ols_from_micro(y[selected], design[selected])
    fit_non = ols_from_micro(y[~selected], design[~selected])
    fit_pop = ols_from_micro(y, design)

    spec = fit_proxy_linear(y[selected], z[selected], a[selected], z_names=("z1", "z2"), a_names=("a",))
    sel_moments = conditional_moments_selected(y[selected], z[selected], a[selected], spec)
    nonsel_stats = compute_summary(
        np.column_stack([a[~selected], z[~selected]]),
        names=("a", "z1", "z2"),
        pattern="nonselected",
    )
    non_moments = conditional_moments_nonselected(spec, nonsel_stats)

    # The floored-variance warning is irrelevant here: grid metrics never
    # consume the implied non-selected residual variance.
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="implied non-selected residual variance")
        mubns_rows = np.array(
            [pmm.mubns(sel_moments, non_moments, phi).mubns for phi in options.phi_grid]
        )
        interval = pmm.mle_interval(sel_moments, non_moments)
    t_diff = fit_sel.coefficients - fit_non.coefficients

    bayes_res = {}
    if options.bayes:
        for prior_name in options.bayes.priors:
            prior = PhiPrior.uniform() if prior_name == "uniform" else PhiPrior.discrete()
            summary = posterior_mubns(
                y[selected],
                z[selected],
                a[selected],
                nonsel_stats,
                prior,
                n_draws=options.bayes.n_draws,
                target="linear",
                seed=int(rng.integers(2**63 - 1)),
                aggregate_mode=options.bayes.aggregate_mode,
                z_names=("z1", "z2"),
                a_names=("a",),
            )
            bayes_res[prior_name] = {
                "cover": (summary.ci_lower <= t_diff) & (t_diff <= summary.ci_upper),
                "width": summary.width,
                "median": summary.median,
            }

    return {
        "n_selected": n_sel,
        "true_diff": t_diff,
        "true_bias": fit_sel.coefficients - fit_pop.coefficients,
        "mubns": mubns_rows,
        "mle": interval,
        "bayes": bayes_res,
    }


def desk_grid() -> list[tuple[PopulationConfig, SelectionConfig]]:
    """Reduced grid for desk-scale runs: a 2x2x2x2 population sub-grid
    crossed with 6 selection mechanisms (3 outcome strengths x 2 auxiliary
    strengths, predictor effects held at the weak level)."""
    lo, hi = 0.2, 0.6
    pops = [
        PopulationConfig(rho_y1=r1, rho_y2=r2, cond_cor_ya=cc, rho_1a=ra)
        for r1 in (lo, hi)
        for r2 in (lo, hi)
        for cc in (0.2, 0.8)
        for ra in (lo, hi)
    ]
    weak = math.log(1.1)
    sels = [
        SelectionConfig(gamma_y=gy, gamma_z1=weak, gamma_z2=weak, gamma_a=ga)
        for gy in GAMMA_Y_LEVELS
        for ga in GAMMA_LEVELS
    ]
    return [(p, s) for p in pops for s in sels]


def full_grid() -> list[tuple[PopulationConfig, SelectionConfig]]:
    """The complete 81 x 24 = 1,944-cell experiment."""
    pops = [
        PopulationConfig(rho_y1=r1, rho_y2=r2, cond_cor_ya=cc, rho_1a=ra)
        for r1 in RHO_LEVELS
        for r2 in RHO_LEVELS
        for cc in COND_COR_LEVELS
        for ra in RHO_LEVELS
    ]
    sels = [
        SelectionConfig(gamma_y=gy, gamma_z1=g1, gamma_z2=g2, gamma_a=ga)
        for gy in GAMMA_Y_LEVELS
        for g1 in GAMMA_LEVELS
        for g2 in GAMMA_LEVELS
        for ga in GAMMA_LEVELS
    ]
    return [(p, s) for p in pops for s in sels]


def _evaluate_cell_job(args):
    pop_cfg, sel_cfg, n_reps, entropy, spawn_key, options, cell_id = args
    ss = np.random.SeedSequence(entropy, spawn_key=spawn_key)
    return evaluate_cell(pop_cfg, sel_cfg, n_reps, ss, options, cell_id)


def run_grid(
    cells: Sequence[tuple[PopulationConfig, SelectionConfig]],
    n_reps: int,
    seed: int,
    options: EvalOptions | Sequence[EvalOptions],
    jobs: int = 1,
    progress=None,
) -> list[SimResult]:
    """Evaluate every cell with per-cell seed streams.

    ``options`` is either one EvalOptions for all cells or one per cell.
    Results are deterministic for a given seed regardless of ``jobs``.
    """
    if isinstance(options, EvalOptions):
        options = [options] * len(cells)
    if len(options) != len(cells):
        raise DataError("need one EvalOptions per cell")
    job_args = [
        (pop, sel, n_reps, seed, (i,), opt, f"cell{i:04d}")
        for i, ((pop, sel), opt) in enumerate(zip(cells, options))
    ]
    results: list[SimResult] = []
    if jobs <= 1:
        for i, args in enumerate(job_args):
            results.append(_evaluate_cell_job(args))
            if progress:
                progress(i + 1, len(job_args))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, res in enumerate(pool.map(_evaluate_cell_job, job_args)):
                results.append(res)
                if progress:
                    progress(i + 1, len(job_args))
    return results


def iter_metric_rows(result: SimResult) -> Iterable[dict]:
    """Tidy rows (one per cell, coefficient, metric) for CSV export."""
    base = {
        "cell_id": result.cell_id,
        "rho_y1": result.pop.rho_y1,
        "rho_y2": result.pop.rho_y2,
        "cond_cor_ya": result.pop.cond_cor_ya,
        "rho_1a": result.pop.rho_1a,
        "gamma_y": result.sel.gamma_y,
        "gamma_z1": result.sel.gamma_z1,
        "gamma_z2": result.sel.gamma_z2,
        "gamma_a": result.sel.gamma_a,
    }

    def row(coefficient, phi, metric, value):
        out = dict(base)
        out.update(coefficient=coefficient, phi=phi, metric=metric, value=value)
        return out

    yield row("", "", "n_reps", result.n_reps)
    yield row("", "", "n_failed", result.n_failed)
    yield row("", "", "median_selected_count", float(np.median(result.selected_counts[result.ok]))
              if result.ok.any() else float("nan"))
    if not result.ok.any():
        return

    t_diff = result.pooled("true_diff")
    t_bias = result.pooled("true_bias")
    mub = result.pooled("mubns")
    cover = result.mle_cover[result.ok]
    width = (result.mle_hi - result.mle_lo)[result.ok]
    for c, coef in enumerate(COEF_NAMES):
        yield row(coef, "", "median_true_diff", float(np.median(t_diff[:, c])))
        yield row(coef, "", "median_true_bias", float(np.median(t_bias[:, c])))
        yield row(coef, "", "mle_coverage", float(cover[:, c].mean()))
        yield row(coef, "", "mle_median_width", float(np.median(width[:, c])))
        for j, phi in enumerate(result.phi_grid):
            yield row(coef, phi, "median_mubns", float(np.median(mub[:, j, c])))
            yield row(coef, phi, "spearman_diff", _spearman(mub[:, j, c], t_diff[:, c]))
            yield row(coef, phi, "spearman_bias", _spearman(mub[:, j, c], t_bias[:, c]))
        for prior, res in result.bayes.items():
            yield row(coef, "", f"bayes_{prior}_coverage", float(res["cover"][result.ok, c].mean()))
            yield row(coef, "", f"bayes_{prior}_median_width", float(np.median(res["width"][result.ok, c])))
            yield row(coef, "", f"bayes_{prior}_median_posterior_median",
                      float(np.median(res["median"][result.ok, c])))
