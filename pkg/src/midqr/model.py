"""End-to-end model fitting: kernel step, coefficient step, inference.

`fit_mid_quantile` wires the pieces together: bandwidth selection, the
conditional mid-CDF matrix, per-level coefficient estimation (closed form
inside the admissible range, numerical outside when enabled), and the
requested variance machinery.  The result is a `FittedMidQuantileModel`
that can predict conditional mid-quantiles for new covariate rows.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fit as _fit
from . import inference as _inf
from . import kernel_cdf as _kcdf
from .links import get_link

__all__ = ["FittedMidQuantileModel", "fit_mid_quantile", "build_design"]


def build_design(covariates, add_intercept=True):
    """Regression design matrix: optional intercept plus covariate columns."""
    W = np.atleast_2d(np.asarray(covariates, dtype=float))
    if add_intercept:
        return np.column_stack([np.ones(W.shape[0]), W])
    return W


@dataclass
class FittedMidQuantileModel:
    """Per-level coefficients, variances, and fit diagnostics.

    ``fit_methods`` records ``"closed-form"`` or ``"numerical"`` per level;
    ``residuals`` holds the second-step regression residuals (transformed
    inverted values minus fitted linear predictors) used by the sandwich
    component.
    """

    p_levels: tuple
    betas: dict
    variances: dict
    fit_methods: dict
    residuals: dict
    link: object
    admissible: _fit.AdmissibleRange
    bandwidths: _kcdf.Bandwidths = None
    spec: _kcdf.CovariateSpec = None
    seed: object = None
    diagnostics: dict = field(default_factory=dict)

    def _key(self, p):
        for pk in self.p_levels:
            if pk == p or abs(pk - p) <= 1e-12:
                return pk
        raise KeyError(f"level {p} was not fitted; available: {self.p_levels}")

    def coefficients(self, p):
        return self.betas[self._key(p)]

    def variance(self, p):
        return self.variances[self._key(p)]

    def fit_method(self, p):
        return self.fit_methods[self._key(p)]

    def predict(self, xnew, p, scale="response"):
        return _fit.predict(self, xnew, p, scale=scale)

    def confidence_intervals(self, level=0.95):
        return _inf.confidence_intervals(self, level=level)


def fit_mid_quantile(y, covariates, p_levels, spec, link="identity",
                     bandwidths="rule-of-thumb", variance="analytic",
                     boot=200, seed=None, numerical_fallback=True,
                     continuous_kernel="gaussian", add_intercept=True):
    """Fit the conditional mid-quantile model at one or more levels.

    Parameters
    ----------
    y : array_like
        Discrete response vector.
    covariates : array_like
        n x q matrix of covariates (without intercept).
    p_levels : float or sequence of float
        Quantile levels in (0, 1).
    spec : CovariateSpec
        Per-column covariate kinds.
    link : str or TransformationFamily
        Transformation the model is linear under.
    bandwidths : str or Bandwidths
        ``"rule-of-thumb"``, ``"cross-validation"``, or explicit values.
    variance : str or None
        ``"analytic"`` (sandwich plus delta method, closed-form levels
        only), ``"bootstrap"``, or ``None`` to skip inference.
    boot : int
        Bootstrap replicates when ``variance="bootstrap"``.
    seed : int or None
        Seed for the bootstrap resampling.
    numerical_fallback : bool
        Fit levels outside the admissible range numerically instead of
        raising.
    """
    link = get_link(link)
    y = np.asarray(y, dtype=float).ravel()
    W = np.atleast_2d(np.asarray(covariates, dtype=float))
    if W.shape[0] != y.size:
        raise ValueError("covariates must have one row per response value")
    if np.isscalar(p_levels):
        p_levels = (float(p_levels),)
    p_levels = tuple(float(p) for p in p_levels)
    for p in p_levels:
        if not 0.0 < p < 1.0:
            raise ValueError("all quantile levels must lie in (0, 1)")

    spec = spec.resolved_for(W)
    if isinstance(bandwidths, _kcdf.Bandwidths):
        bw = bandwidths
    else:
        bw = _kcdf.select_bandwidths(
            y, W, spec, method=bandwidths, continuous_kernel=continuous_kernel
        )

    cdf = _kcdf.conditional_cdf(y, W, bw, spec, continuous_kernel)
    pim = _kcdf.conditional_mid_probabilities(cdf)
    rng = _fit.admissible_range(pim)
    X = build_design(W, add_intercept=add_intercept)

    betas, variances, methods, residuals, diagnostics = {}, {}, {}, {}, {}
    for p in p_levels:
        if rng.contains(p):
            beta = _fit.closed_form_fit(X, pim, p, link)
            method = "closed-form"
        elif numerical_fallback:
            beta, diag = _fit.numerical_fit(X, pim, p, link, y=y)
            method = "numerical"
            diagnostics[p] = diag
        else:
            raise _fit.BracketError(
                f"level {p} outside the admissible range "
                f"[{rng.lo:.4g}, {rng.hi:.4g}] and numerical fallback is off"
            )
        betas[p] = beta
        methods[p] = method

        if method == "closed-form":
            u, _, _ = _fit._u_values(pim, p, link)
            residuals[p] = u - X @ beta
        else:
            residuals[p] = None

        if variance == "analytic" and method == "closed-form":
            hw = _inf.huber_white(X, residuals[p])
            J = _inf.jacobian_beta_wrt_pi(X, pim, p, link)
            delta = _inf.delta_component(
                J, pim.varpi, groups=_inf.row_groups(W), cdf=cdf
            )
            variances[p] = _inf.total_variance(hw, delta)
        elif variance == "analytic":
            warnings.warn(
                f"analytic variance unavailable for the numerical fit at "
                f"p={p}; returning no variance for that level",
                RuntimeWarning,
            )
            variances[p] = None
        elif variance == "bootstrap":
            variances[p] = _inf.bootstrap_variance(
                y, W, spec, bw, p, link, B=boot, seed=seed,
                design=lambda V: build_design(V, add_intercept=add_intercept),
                continuous_kernel=continuous_kernel,
            )
        elif variance is None:
            variances[p] = None
        else:
            raise ValueError("variance must be 'analytic', 'bootstrap' or None")

    return FittedMidQuantileModel(
        p_levels=p_levels,
        betas=betas,
        variances=variances,
        fit_methods=methods,
        residuals=residuals,
        link=link,
        admissible=rng,
        bandwidths=bw,
        spec=spec,
        seed=seed,
        diagnostics=diagnostics,
    )
