"""Selection-bias indices for regression coefficients estimated from
non-probability samples.

Given microdata for the selected (non-probability) sample and aggregate
summary statistics (means and covariances of the predictors and auxiliary
variables) for the non-selected population, the package computes
per-coefficient measures of unadjusted bias for linear and probit
regressions over a sensitivity parameter phi in [0, 1], along with fully
Bayesian credible intervals, and ships a Monte Carlo harness that evaluates
the indices against known truth at configurable scale.
"""

__version__ = "0.1.0"

from .bayes import (
    PhiPrior,
    PosteriorSummary,
    draw_nonselected_params,
    draw_selected_params,
    posterior_mubns,
    summarize,
)
from .errors import (
    ConvergenceError,
    DataError,
    MomentConsistencyError,
    PerfectSeparationError,
    RankDeficiencyError,
    UnstableDrawsError,
    WeakProxyError,
)
from .pmm import (
    BiasIndexSet,
    adjusted_coefficients,
    g_factor,
    mle_interval,
    mub,
    mubns,
    nonselected_outcome_params,
)
from .probit import (
    draw_coefficients,
    draw_latent,
    fit_probit,
    fit_probit_proxy,
    rescale_u_on_z,
    truncated_normal_above,
)
from .proxy import (
    ConditionalMoments,
    ProxySpec,
    conditional_moments_nonselected,
    conditional_moments_selected,
    fit_proxy_linear,
    proxy_values,
)
from .statcore import (
    RegressionFit,
    SummaryStats,
    VariableSet,
    compute_summary,
    ols_from_micro,
    ols_from_summary,
)

__all__ = [
    "__version__",
    "BiasIndexSet",
    "ConditionalMoments",
    "ConvergenceError",
    "DataError",
    "MomentConsistencyError",
    "PerfectSeparationError",
    "PhiPrior",
    "PosteriorSummary",
    "ProxySpec",
    "RankDeficiencyError",
    "RegressionFit",
    "SummaryStats",
    "UnstableDrawsError",
    "VariableSet",
    "WeakProxyError",
    "adjusted_coefficients",
    "compute_summary",
    "conditional_moments_nonselected",
    "conditional_moments_selected",
    "draw_coefficients",
    "draw_latent",
    "draw_nonselected_params",
    "draw_selected_params",
    "fit_probit",
    "fit_probit_proxy",
    "fit_proxy_linear",
    "g_factor",
    "mle_interval",
    "mub",
    "mubns",
    "nonselected_outcome_params",
    "ols_from_micro",
    "ols_from_summary",
    "posterior_mubns",
    "proxy_values",
    "summarize",
    "truncated_normal_above",
]
