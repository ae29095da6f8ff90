"""Conditional mid-quantile regression for discrete responses.

Quantile regression for binary, ordinal, and count outcomes built on
mid-distribution functions: a nonparametric first step estimates each
observation's conditional mid-probabilities, and a least-squares second
step turns them into regression coefficients, with sandwich-plus-delta
variance estimation and a Monte Carlo study harness.
"""

from .middist import (
    DiscreteSample,
    MidCdf,
    Pmf,
    tabulate,
    mid_cdf,
    mid_quantile,
    population_mid_quantile,
)
from .kernel_cdf import (
    Bandwidths,
    ConditionalCdfMatrix,
    ConditionalMidCdfMatrix,
    CovariateSpec,
    conditional_cdf,
    conditional_mid_probabilities,
    kernel_weight,
    select_bandwidths,
    var_F_hat,
)
from .links import (
    TransformationFamily,
    get_link,
    identity_link,
    linear_link,
    log_link,
    logit_link,
)
from .fit import (
    AdmissibleRange,
    BracketError,
    FitError,
    InterpolatedMidCdf,
    admissible_range,
    closed_form_fit,
    gradient,
    hessian,
    interpolate,
    locate_bracket,
    numerical_fit,
    objective,
    predict,
)
from .inference import (
    SparseJacobian,
    VarianceEstimate,
    bootstrap_variance,
    confidence_intervals,
    delta_component,
    huber_white,
    jacobian_beta_wrt_pi,
    row_groups,
    score_sandwich_variance,
    total_variance,
)
from .model import FittedMidQuantileModel, build_design, fit_mid_quantile
from .simulate import (
    MetricsTable,
    ScenarioSpec,
    generate,
    mean_true_mid_quantile,
    run_study,
    true_mid_quantile,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteSample", "MidCdf", "Pmf", "tabulate", "mid_cdf",
    "mid_quantile", "population_mid_quantile",
    "Bandwidths", "ConditionalCdfMatrix", "ConditionalMidCdfMatrix",
    "CovariateSpec", "conditional_cdf", "conditional_mid_probabilities",
    "kernel_weight", "select_bandwidths", "var_F_hat",
    "TransformationFamily", "get_link", "identity_link", "linear_link",
    "log_link", "logit_link",
    "AdmissibleRange", "BracketError", "FitError", "InterpolatedMidCdf",
    "admissible_range", "closed_form_fit", "gradient", "hessian",
    "interpolate", "locate_bracket", "numerical_fit", "objective", "predict",
    "SparseJacobian", "VarianceEstimate", "bootstrap_variance",
    "confidence_intervals", "delta_component", "huber_white",
    "jacobian_beta_wrt_pi", "row_groups", "score_sandwich_variance",
    "total_variance",
    "FittedMidQuantileModel", "build_design", "fit_mid_quantile",
    "MetricsTable", "ScenarioSpec", "generate", "mean_true_mid_quantile",
    "run_study", "true_mid_quantile",
]
