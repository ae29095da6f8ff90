"""Variance estimation and confidence intervals for fitted coefficients.

The analytic variance combines two components following the total variance
law: a Huber-White sandwich for the second-step regression, and a
delta-method term that propagates the uncertainty of the estimated
mid-probabilities through the closed-form coefficient map via a sparse
numerical Jacobian.  A case-resampling bootstrap is available as an
alternative, and a score-sandwich estimator derived from the asymptotic
normality result is exposed as a diagnostic.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import fit as _fit
from . import kernel_cdf as _kcdf
from .links import get_link

__all__ = [
    "VarianceEstimate",
    "SparseJacobian",
    "huber_white",
    "jacobian_beta_wrt_pi",
    "delta_component",
    "row_groups",
    "total_variance",
    "bootstrap_variance",
    "confidence_intervals",
    "score_sandwich_variance",
]


@dataclass(frozen=True)
class VarianceEstimate:
    """Coefficient covariance matrix, with components when analytic."""

    total: np.ndarray
    component_hw: np.ndarray = None
    component_delta: np.ndarray = None
    method: str = "analytic"

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.total), 0.0, None))


@dataclass(frozen=True)
class SparseJacobian:
    """Triplet representation of the coefficient/mid-probability Jacobian.

    Shape is ``q x (n * k)`` with columns indexed by the flattened
    (observation, grid) position.  Only the two bracket columns of each
    observation are structurally nonzero, so at most ``2 n`` columns (and
    ``2 n q`` entries) are stored.  Entries whose finite difference kept
    shifting the bracket are listed in ``flagged_columns``.
    """

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple
    flagged_columns: tuple = field(default_factory=tuple)

    @property
    def nnz(self):
        return self.values.size

    @property
    def touched_columns(self):
        return np.unique(self.cols)

    @property
    def sparsity(self):
        """Fraction of the nk x nk mid-probability covariance never touched.

        The delta-method quadratic form reads one diagonal entry of the
        ``nk x nk`` covariance of the mid-probabilities per touched
        column, hence at least ``1 - 2n / (nk)**2`` of that matrix is
        bypassed.
        """
        total = self.shape[1] ** 2
        return 1.0 - self.touched_columns.size / total

    def to_dense(self):
        J = np.zeros(self.shape)
        J[self.rows, self.cols] = self.values
        return J


def huber_white(X, residuals):
    """Sandwich covariance with squared-residual weights, no df correction."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    e = np.asarray(residuals, dtype=float).ravel()
    if e.size != X.shape[0]:
        raise ValueError("residuals must have one entry per observation")
    xtx = X.T @ X
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    bread = np.linalg.inv(xtx)
    xe = X * e[:, None]
    meat = xe.T @ xe
    return bread @ meat @ bread


def _bracket_index(row, p, k):
    j = int(np.searchsorted(row, p))
    if j < k and row[j] == p:
        return j if j < k - 1 else k - 2
    return j - 1


def _u_single(row, grid, j, p):
    slope = (row[j + 1] - row[j]) / (grid[j + 1] - grid[j])
    return (p - row[j]) / slope + grid[j]


def jacobian_beta_wrt_pi(X, pi, p, link="identity", step=1e-6):
    """Numerical Jacobian of the closed-form coefficients in the mid-probabilities.

    Central differences are taken only in the two mid-probability entries
    that enter each observation's inversion; all other columns are zero by
    construction.  A perturbation that changes an observation's bracket
    (or destroys the local monotonicity of its row) is retried with a step
    ten times smaller, up to three times, after which the entry is flagged
    and left at zero.
    """
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = pi.n, pi.k
    q = X.shape[1]
    grid = pi.grid
    xtx = X.T @ X
    A = np.linalg.solve(xtx, X.T)  # q x n

    rows_out, cols_out, vals_out = [], [], []
    flagged = []
    lo_dom, hi_dom = link.domain
    for i in range(n):
        row = pi.pi[i]
        if p < row[0] or p > row[-1] or k < 2:
            raise _fit.BracketError(
                f"level {p} outside the mid-probability range of row {i}",
                row=i,
            )
        j = _bracket_index(row, p, k)
        for c in (j, j + 1):
            delta = step
            value = None
            for _ in range(3):
                ok = True
                us = []
                for sign in (1.0, -1.0):
                    pert = row.copy()
                    pert[c] += sign * delta
                    lo = pert[c - 1] if c > 0 else -np.inf
                    hi = pert[c + 1] if c < k - 1 else np.inf
                    if not lo < pert[c] < hi:
                        ok = False
                        break
                    if _bracket_index(pert, p, k) != j:
                        ok = False
                        break
                    u_arg = _u_single(pert, grid, j, p)
                    if not lo_dom < u_arg < hi_dom:
                        ok = False
                        break
                    us.append(link.h(u_arg))
                if ok:
                    value = (us[0] - us[1]) / (2.0 * delta)
                    break
                delta *= 0.1
            flat = i * k + c
            if value is None:
                flagged.append(flat)
                continue
            rows_out.extend(range(q))
            cols_out.extend([flat] * q)
            vals_out.extend(A[:, i] * value)

    return SparseJacobian(
        rows=np.asarray(rows_out, dtype=int),
        cols=np.asarray(cols_out, dtype=int),
        values=np.asarray(vals_out, dtype=float),
        shape=(q, n * k),
        flagged_columns=tuple(flagged),
    )


def row_groups(covariates):
    """Group labels of observations sharing an identical covariate row.

    Observations with the same covariates receive identical first-step
    estimates, so their mid-probability errors are perfectly dependent;
    the delta method must aggregate their contributions before squaring.
    With all-distinct rows every group is a singleton.
    """
    W = np.atleast_2d(np.asarray(covariates, dtype=float))
    _, inverse = np.unique(W, axis=0, return_inverse=True)
    return inverse


def delta_component(J, varpi, groups=None, cdf=None):
    """Delta-method covariance propagated through the sparse Jacobian.

    With only ``varpi`` this is the quadratic form ``J diag(varpi) J'``,
    which treats every mid-probability estimate as uncorrelated.  Two
    sources of dependence make that understate the variance in finite
    samples, and both can be restored:

    * ``groups`` labels observations sharing a covariate row.  Their
      first-step estimates are identical, hence perfectly correlated, so
      the Jacobian columns are summed within each (group, grid) cell
      before squaring.  Across distinct covariate points the independence
      approximation is kept, as the kernel weights separate.
    * ``cdf`` (the first-step matrix) switches the propagation to the
      full plug-in covariance of each row's mid-probabilities, including
      the strong positive correlation between the two bracket knots,
      instead of the diagonal ``varpi``.
    """
    w = np.asarray(varpi, dtype=float)
    k = w.shape[1] if w.ndim == 2 else None
    w = w.ravel()
    if w.size != J.shape[1]:
        raise ValueError("varpi must flatten to the Jacobian column count")
    q = J.shape[0]
    out = np.zeros((q, q))
    if J.nnz == 0:
        return out
    if groups is None and cdf is None:
        cols = J.touched_columns
        col_pos = {c: idx for idx, c in enumerate(cols)}
        M = np.zeros((q, cols.size))
        for r, c, v in zip(J.rows, J.cols, J.values):
            M[r, col_pos[c]] = v
        return (M * w[cols]) @ M.T
    if k is None:
        raise ValueError("grouped propagation needs varpi in n x k form")
    if groups is None:
        groups = np.arange(J.shape[1] // k)
    groups = np.asarray(groups)

    agg = {}
    vagg = {}
    rep = {}
    for r, c, v in zip(J.rows, J.cols, J.values):
        i, j = divmod(int(c), k)
        key = (int(groups[i]), j)
        if key not in agg:
            agg[key] = np.zeros(q)
            vagg[key] = w[c]
            rep[key] = i
        agg[key][r] += v

    if cdf is None:
        for key, s in agg.items():
            out += vagg[key] * np.outer(s, s)
        return out

    from .kernel_cdf import midprob_covariance

    by_group = {}
    for (g, j), s in agg.items():
        by_group.setdefault(g, []).append((j, s, rep[(g, j)]))
    cov_cache = {}
    for g, items in by_group.items():
        items.sort()
        for a in range(len(items)):
            j1, s1, i1 = items[a]
            for b in range(a, len(items)):
                j2, s2, _ = items[b]
                if (j1, j2) not in cov_cache:
                    cov_cache[(j1, j2)] = midprob_covariance(cdf, j1, j2)
                cval = cov_cache[(j1, j2)][i1]
                block = cval * np.outer(s1, s2)
                out += block if a == b else block + block.T
    return out


def total_variance(hw, delta):
    """Sum of the two variance components, symmetrized.

    Negative diagonal entries (possible only through floating-point
    cancellation) are clipped to zero with a warning.
    """
    hw = 0.5 * (hw + hw.T)
    delta = 0.5 * (delta + delta.T)
    total = hw + delta
    d = np.diag(total)
    if np.any(d < 0.0):
        warnings.warn(
            "negative variance diagonal clipped to zero", RuntimeWarning
        )
        total = total.copy()
        np.fill_diagonal(total, np.clip(d, 0.0, None))
    return VarianceEstimate(
        total=total, component_hw=hw, component_delta=delta, method="analytic"
    )


def bootstrap_variance(y, covariates, spec, bandwidths, p, link="identity",
                       B=200, seed=None, design=None,
                       continuous_kernel="gaussian", max_failure_rate=0.1):
    """Case-resampling bootstrap covariance of the fitted coefficients.

    Rows are resampled with replacement and the two estimation steps are
    rerun on each resample with the bandwidths held fixed at the original
    selection.  Failed refits are dropped and counted; an error is raised
    when more than ``max_failure_rate`` of the replicates fail.  ``design``
    maps a covariate matrix to the regression design matrix (defaults to
    prepending an intercept).  Deterministic given ``seed``.
    """
    link = get_link(link)
    y = np.asarray(y, dtype=float).ravel()
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = y.size
    if B < 2:
        raise ValueError("B must be at least 2")
    if design is None:
        design = lambda W: np.column_stack([np.ones(W.shape[0]), W])

    if hasattr(seed, "integers"):
        # a generator (or stub) drives every replicate directly
        rngs = [seed] * B
    else:
        rngs = [np.random.default_rng(s)
                for s in np.random.SeedSequence(seed).spawn(B)]

    betas = []
    failures = 0
    for rng in rngs:
        idx = rng.integers(0, n, size=n)
        try:
            cdf = _kcdf.conditional_cdf(
                y[idx], covariates[idx], bandwidths, spec, continuous_kernel
            )
            pim = _kcdf.conditional_mid_probabilities(cdf)
            Xb = design(covariates[idx])
            if _fit.admissible_range(pim).contains(p):
                beta = _fit.closed_form_fit(Xb, pim, p, link)
            else:
                beta, _ = _fit.numerical_fit(Xb, pim, p, link, y=y[idx])
            betas.append(beta)
        except Exception:
            failures += 1
    if failures > max_failure_rate * B:
        raise RuntimeError(
            f"{failures}/{B} bootstrap refits failed; "
            "check bandwidths and the admissible range"
        )
    betas = np.asarray(betas)
    if np.allclose(betas, betas[0]):
        total = np.zeros((betas.shape[1], betas.shape[1]))
    else:
        total = np.atleast_2d(np.cov(betas.T, ddof=1))
    return VarianceEstimate(total=total, method="bootstrap")


def confidence_intervals(model, level=0.95):
    """Normal-theory confidence intervals for every fitted level.

    Returns a dict mapping each quantile level to an ``(lower, upper)``
    pair of coefficient arrays.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly inside (0, 1)")
    z = norm.ppf(0.5 * (1.0 + level))
    out = {}
    for pk in model.p_levels:
        variance = model.variance(pk)
        if variance is None:
            raise ValueError(
                f"no variance estimate available at level {pk}"
            )
        beta = model.coefficients(pk)
        se = variance.standard_errors
        out[pk] = (beta - z * se, beta + z * se)
    return out


def score_sandwich_variance(X, pi, p, beta, link="identity"):
    """Diagnostic covariance from the asymptotic-normality sandwich.

    Uses the objective Hessian at the fitted coefficients as the bread and
    a plug-in estimate of the score variance (interpolating the
    mid-probability variances at each observation's evaluation point) as
    the meat.  The analytic two-component estimator remains the default;
    this form exists as a numerical cross-check.
    """
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    J = _fit.hessian(beta, X, pi, p, link)
    lp, eta, _, slope = _fit._interp_state(beta, X, pi, link)

    grid = pi.grid
    k = grid.size
    seg = np.clip(np.searchsorted(grid, eta, side="right") - 1, 0, max(k - 2, 0))
    rows = np.arange(n)
    if k > 1:
        span = grid[seg + 1] - grid[seg]
        gam = np.clip((eta - grid[seg]) / span, 0.0, 1.0)
        v = (1.0 - gam) * pi.varpi[rows, seg] + gam * pi.varpi[rows, seg + 1]
    else:
        v = pi.varpi[:, 0]

    s = X * (slope * link.d1hinv(lp))[:, None]
    D = (4.0 / n ** 2) * ((s * v[:, None]).T @ s)
    Jinv = np.linalg.pinv(J)
    return VarianceEstimate(total=Jinv @ D @ Jinv, method="score-sandwich")
