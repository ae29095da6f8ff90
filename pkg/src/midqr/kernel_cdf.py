"""Nonparametric conditional CDF estimation with mixed covariate types.

The estimator is a weighted empirical CDF evaluated at every sample point:
``F(z_j | x_i) = sum_l I(y_l <= z_j) K(X_l, x_i) / sum_l K(X_l, x_i)``,
with a product kernel over covariate columns.  Continuous columns use a
Gaussian kernel (Epanechnikov by option), unordered discrete columns the
Aitchison-Aitken kernel, and ordered discrete columns a geometric kernel
``lambda ** |distance|``.  From the CDF matrix we derive per-observation
mid-probabilities and their plug-in variances, the inputs of the second
estimation step.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CovariateSpec",
    "Bandwidths",
    "ConditionalCdfMatrix",
    "ConditionalMidCdfMatrix",
    "kernel_weight",
    "conditional_cdf",
    "select_bandwidths",
    "conditional_mid_probabilities",
    "var_F_hat",
]

KINDS = ("continuous", "unordered", "ordered")

#: Integral of the squared continuous kernel, used by the plug-in variance.
KERNEL_SQUARE_INTEGRAL = {
    "gaussian": 1.0 / (2.0 * math.sqrt(math.pi)),
    "epanechnikov": 0.6,
}

#: Variance floor applied to the plug-in variance of the CDF estimates.
VAR_FLOOR = 1e-12


class ZeroWeightError(RuntimeError):
    """All kernel weights vanished at some evaluation point."""

    def __init__(self, row):
        super().__init__(
            f"kernel weights sum to zero at observation {row}; "
            "increase the bandwidth so neighbours receive positive weight"
        )
        self.row = row


@dataclass(frozen=True)
class CovariateSpec:
    """Per-column covariate kinds, plus category counts where needed.

    ``categories`` holds the number of levels of each unordered column
    (``None`` elsewhere); `resolved_for` fills it from data.
    """

    kinds: tuple
    categories: tuple = None

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if len(kinds) == 0:
            raise ValueError("at least one covariate column is required")
        for kind in kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown covariate kind '{kind}'")
        if self.categories is None:
            object.__setattr__(self, "categories", (None,) * len(kinds))
        else:
            cats = tuple(self.categories)
            if len(cats) != len(kinds):
                raise ValueError("categories must align with kinds")
            object.__setattr__(self, "categories", cats)

    @property
    def q(self):
        return len(self.kinds)

    @property
    def n_continuous(self):
        return sum(kind == "continuous" for kind in self.kinds)

    def resolved_for(self, X):
        """Fill unordered category counts from the observed columns of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cats = list(self.categories)
        for j, kind in enumerate(self.kinds):
            if kind == "unordered" and cats[j] is None:
                cats[j] = int(np.unique(X[:, j]).size)
        return CovariateSpec(self.kinds, tuple(cats))

    def max_discrete_bandwidth(self, j):
        """Admissible upper bound of the bandwidth for discrete column j."""
        kind = self.kinds[j]
        if kind == "unordered":
            c = self.categories[j]
            if c is None:
                raise ValueError(
                    f"category count for unordered column {j} is unresolved"
                )
            return (c - 1.0) / c if c > 1 else 1.0
        if kind == "ordered":
            return 1.0
        raise ValueError(f"column {j} is continuous")


@dataclass(frozen=True)
class Bandwidths:
    """Smoothing parameters, one per covariate column."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("bandwidths must form a 1-d array")

    def validate_for(self, spec):
        if self.values.size != spec.q:
            raise ValueError("bandwidth count must match covariate count")
        for j, kind in enumerate(spec.kinds):
            lam = self.values[j]
            if kind == "continuous":
                if not lam > 0:
                    raise ValueError(f"continuous bandwidth {j} must be > 0")
            elif not 0.0 <= lam <= 1.0:
                raise ValueError(f"discrete bandwidth {j} must lie in [0, 1]")

    def continuous_product(self, spec):
        prod = 1.0
        for j, kind in enumerate(spec.kinds):
            if kind == "continuous":
                prod *= self.values[j]
        return prod


@dataclass(frozen=True)
class ConditionalCdfMatrix:
    """Conditional CDF estimates at every (observation, grid value) pair.

    ``F[i, j]`` estimates ``P(Y <= grid[j] | X = x_i)``; rows are
    nondecreasing and end at exactly one.  ``density[i]`` is the kernel
    estimate of the covariate density at ``x_i``.  The bandwidths, spec,
    and kernel used are retained for downstream variance computations.
    """

    grid: np.ndarray
    F: np.ndarray
    density: np.ndarray
    bandwidths: Bandwidths = None
    spec: CovariateSpec = None
    continuous_kernel: str = "gaussian"
    mass: np.ndarray = None

    def __post_init__(self):
        for name in ("grid", "F", "density"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.mass is not None:
            arr = np.array(self.mass, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, "mass", arr)
        if self.F.ndim != 2 or self.F.shape[1] != self.grid.size:
            raise ValueError("F must be n x k with k matching the grid")
        if self.density.shape != (self.F.shape[0],):
            raise ValueError("density must hold one value per observation")

    @property
    def n(self):
        return self.F.shape[0]

    @property
    def k(self):
        return self.F.shape[1]


@dataclass(frozen=True)
class ConditionalMidCdfMatrix:
    """Per-observation mid-probabilities with plug-in variances."""

    grid: np.ndarray
    pi: np.ndarray
    varpi: np.ndarray

    def __post_init__(self):
        for name in ("grid", "pi", "varpi"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.pi.shape != self.varpi.shape:
            raise ValueError("pi and varpi must share one shape")
        if self.pi.ndim != 2 or self.pi.shape[1] != self.grid.size:
            raise ValueError("pi must be n x k with k matching the grid")

    @property
    def n(self):
        return self.pi.shape[0]

    @property
    def k(self):
        return self.pi.shape[1]


def _column_weights(dx, kind, lam, c=None, kernel="gaussian"):
    """Kernel weights for one covariate column given signed differences."""
    if kind == "continuous":
        t = dx / lam
        if kernel == "gaussian":
            return np.exp(-0.5 * t * t) / (lam * math.sqrt(2.0 * math.pi))
        if kernel == "epanechnikov":
            return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t) / lam, 0.0)
        raise ValueError(f"unknown continuous kernel '{kernel}'")
    if kind == "unordered":
        if c is None:
            raise ValueError("unordered column needs a category count")
        same = dx == 0
        off = lam / (c - 1) if c > 1 else 0.0
        return np.where(same, 1.0 - lam, off)
    if kind == "ordered":
        return lam ** np.abs(dx)
    raise ValueError(f"unknown covariate kind '{kind}'")


def kernel_weight(xi, x, bw, spec, continuous_kernel="gaussian"):
    """Product kernel weight between two covariate rows.

    Continuous columns contribute a scaled Gaussian (or Epanechnikov)
    factor, unordered columns the Aitchison-Aitken factor, and ordered
    columns ``lambda ** |difference|``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if xi.shape != x.shape or xi.size != spec.q:
        raise ValueError("covariate rows must match the declared kinds")
    bw.validate_for(spec)
    w = 1.0
    for j, kind in enumerate(spec.kinds):
        w *= float(
            _column_weights(
                xi[j] - x[j], kind, bw.values[j], spec.categories[j],
                continuous_kernel,
            )
        )
    return w


def _weight_matrix(X, bw, spec, continuous_kernel="gaussian"):
    """n x n matrix with W[i, l] = K(X_l, x_i); symmetric in our kernels."""
    n = X.shape[0]
    W = np.ones((n, n))
    for j, kind in enumerate(spec.kinds):
        col = X[:, j]
        dx = col[:, None] - col[None, :]
        W *= _column_weights(dx, kind, bw.values[j], spec.categories[j],
                             continuous_kernel)
    return W


def conditional_cdf(y, X, bw, spec, continuous_kernel="gaussian"):
    """First-step conditional CDF estimates at every sample point.

    The weighted CDF is accumulated from per-value weight totals, with
    weights rescaled by each row's self-weight.  The rescaling leaves the
    ratio unchanged and makes the uniform-weight reduction (constant
    covariate) agree with the marginal ECDF bit for bit.  Rows are
    monotonized by a running maximum and clipped to [0, 1].
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be n x q aligned with y")
    n = y.size
    if n < 2:
        raise ValueError("need at least two observations")
    spec = spec.resolved_for(X)
    bw.validate_for(spec)

    W = _weight_matrix(X, bw, spec, continuous_kernel)
    rowsum = W.sum(axis=1)
    bad = np.flatnonzero(rowsum <= 0.0)
    if bad.size:
        raise ZeroWeightError(int(bad[0]))
    density = rowsum / n

    self_w = np.diag(W).copy()
    W = W / self_w[:, None]

    grid, inverse = np.unique(y, return_inverse=True)
    k = grid.size
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inverse] = 1.0
    mass = W @ onehot
    total = np.cumsum(mass, axis=1)[:, -1:]
    F = np.cumsum(mass, axis=1) / total
    mass /= total

    F = np.maximum.accumulate(F, axis=1)
    np.clip(F, 0.0, 1.0, out=F)

    return ConditionalCdfMatrix(grid, F, density, bw, spec, continuous_kernel,
                                mass=mass)


def _rot_bandwidths(y, X, spec):
    n = X.shape[0]
    q_c = spec.n_continuous
    lams = np.empty(spec.q)
    for j, kind in enumerate(spec.kinds):
        if kind == "continuous":
            sd = np.std(X[:, j], ddof=1)
            if not sd > 0:
                raise ValueError(
                    f"continuous covariate column {j} has zero variance"
                )
            lams[j] = 1.06 * sd * n ** (-1.0 / (4.0 + q_c))
        else:
            lam = 0.5 * n ** (-2.0 / (4.0 + q_c))
            lams[j] = min(lam, spec.max_discrete_bandwidth(j))
    return Bandwidths(lams)


def _cv_score(y, X, bw, spec, continuous_kernel):
    """Leave-one-out integrated squared error of the CDF estimate."""
    n = y.size
    W = _weight_matrix(X, bw, spec, continuous_kernel)
    np.fill_diagonal(W, 0.0)
    rowsum = W.sum(axis=1)
    if np.any(rowsum <= 0.0):
        return np.inf
    grid = np.unique(y)
    indicator = (y[:, None] <= grid[None, :]).astype(float)
    F_loo = (W @ indicator) / rowsum[:, None]
    return float(np.sum((indicator - F_loo) ** 2))


def select_bandwidths(y, X, spec, method="rule-of-thumb",
                      continuous_kernel="gaussian", grid_points=7):
    """Bandwidth selection by rule of thumb or least-squares cross-validation.

    The rule of thumb sets ``1.06 * sd * n**(-1/(4+q_c))`` for continuous
    columns and ``0.5 * n**(-2/(4+q_c))`` (capped at the admissible
    maximum) for discrete ones, with ``q_c`` the number of continuous
    columns.  Cross-validation minimizes the leave-one-out integrated
    squared error of the CDF estimate over a log-spaced grid of
    ``grid_points`` values per column: a multiplicative neighbourhood of
    the rule-of-thumb value for continuous columns, and a grid anchored
    at the rule-of-thumb value spanning up to the uniform-smoothing limit
    for discrete ones (whose admissible range is bounded).
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    spec = spec.resolved_for(X)
    rot = _rot_bandwidths(y, X, spec)
    if method == "rule-of-thumb":
        return rot
    if method != "cross-validation":
        raise ValueError("method must be 'rule-of-thumb' or 'cross-validation'")
    if y.size < 10:
        raise ValueError("cross-validation needs at least 10 observations")

    factors = np.geomspace(0.25, 4.0, grid_points)
    axes = []
    for j, kind in enumerate(spec.kinds):
        if kind == "continuous":
            cand = rot.values[j] * factors
        else:
            # the admissible discrete range is bounded, so anchor the grid
            # at the rule-of-thumb value and span up to the uniform limit
            lam_max = spec.max_discrete_bandwidth(j)
            lo = min(rot.values[j] / 4.0, lam_max)
            cand = np.geomspace(lo, lam_max, grid_points)
        axes.append(np.unique(cand))

    best_score, best = np.inf, rot.values
    for combo in itertools.product(*axes):
        bw = Bandwidths(np.array(combo))
        score = _cv_score(y, X, bw, spec, continuous_kernel)
        if score < best_score:
            best_score, best = score, np.array(combo)
    if not np.isfinite(best_score):
        raise ValueError("cross-validation failed: all candidates degenerate")
    return Bandwidths(best)


#: Tie-break increment added to flat stretches of a mid-probability row.
TIE_EPS = 1e-9


def _strictify_row(row):
    """Force a monotone row strictly into (0, 1) with strict increase."""
    out = row.copy()
    k = out.size
    for j in range(1, k):
        if out[j] <= out[j - 1]:
            bumped = row[j] + TIE_EPS * (j + 1)
            out[j] = bumped if bumped > out[j - 1] else out[j - 1] + TIE_EPS
    if out[0] <= 0.0:
        out[0] = min(1e-12, 0.5 * out[1]) if k > 1 else 1e-12
    # keep the top inside (0, 1): walk back if entries reached one
    cap = 1.0 - 1e-12
    if out[-1] >= 1.0:
        out[-1] = cap
        for j in range(k - 2, -1, -1):
            if out[j] >= out[j + 1]:
                out[j] = out[j + 1] - TIE_EPS
            else:
                break
    return out


def conditional_mid_probabilities(cdf):
    """Mid-probabilities and their variances from a conditional CDF matrix.

    ``pi[i, j]`` subtracts half the local mass from the CDF value,
    ``F[i, j] - 0.5 * m[i, j]``, which reduces to ``0.5 * F[i, 0]`` in the
    first column; with uniform weights this reproduces the marginal
    mid-CDF arithmetic bit for bit.  Exact ties are broken with a tiny
    increment so downstream interpolation slopes stay positive.  The
    variance of each mid-probability combines the plug-in CDF variances
    of the two columns involved; the covariance term is dropped as
    asymptotically negligible.
    """
    F = cdf.F
    if cdf.mass is not None:
        pi = F - 0.5 * cdf.mass
    else:
        pi = np.empty_like(F)
        pi[:, 0] = 0.5 * F[:, 0]
        if F.shape[1] > 1:
            pi[:, 1:] = 0.5 * (F[:, 1:] + F[:, :-1])

    needs_fix = (pi[:, 0] <= 0.0) | (pi[:, -1] >= 1.0)
    if pi.shape[1] > 1:
        needs_fix |= np.any(np.diff(pi, axis=1) <= 0.0, axis=1)
    for i in np.flatnonzero(needs_fix):
        pi[i] = _strictify_row(pi[i])

    vF = var_F_hat(cdf)
    varpi = np.empty_like(vF)
    varpi[:, 0] = 0.25 * vF[:, 0]
    if vF.shape[1] > 1:
        varpi[:, 1:] = 0.25 * (vF[:, 1:] + vF[:, :-1])

    return ConditionalMidCdfMatrix(cdf.grid, pi, varpi)


def _variance_scale(cdf, bw=None):
    """Per-row scale ``kappa**q_c / (n * prod(lambda_c) * density)``."""
    bw = bw if bw is not None else cdf.bandwidths
    if bw is None:
        raise ValueError("bandwidths unavailable: pass them explicitly")
    spec = cdf.spec
    kappa = KERNEL_SQUARE_INTEGRAL[cdf.continuous_kernel]
    lam_prod = bw.continuous_product(spec)
    return kappa ** spec.n_continuous / (cdf.n * lam_prod * cdf.density)


def var_F_hat(cdf, bw=None):
    """Plug-in asymptotic variance of the conditional CDF estimates.

    Uses ``kappa**q_c * F (1 - F) / (n * prod(lambda_c) * density)`` with
    ``kappa`` the integral of the squared continuous kernel and the
    product running over continuous bandwidths only, floored at a small
    positive constant.
    """
    scale = _variance_scale(cdf, bw)
    v = scale[:, None] * cdf.F * (1.0 - cdf.F)
    return np.maximum(v, VAR_FLOOR)


def midprob_covariance(cdf, j, l, bw=None):
    """Plug-in covariance of two mid-probability columns, per row.

    The mid-probability in column ``j`` averages the CDF columns ``j - 1``
    and ``j`` (just half of column 0 when ``j == 0``), and the weighted
    CDF estimates within one row obey the binomial-type covariance
    ``cov(F_m, F_l) = scale * F_min (1 - F_max)``.  This full form is what
    the delta-method propagation needs: adjacent mid-probabilities of one
    row are strongly positively correlated, and dropping the cross terms
    understates the coefficient variance.
    """
    scale = _variance_scale(cdf, bw)
    F = cdf.F

    def parts(idx):
        if idx == 0:
            return ((0, 0.5),)
        return ((idx - 1, 0.5), (idx, 0.5))

    out = np.zeros(cdf.n)
    for m, wm in parts(j):
        for ml, wl in parts(l):
            lo, hi = (m, ml) if m <= ml else (ml, m)
            out += wm * wl * F[:, lo] * (1.0 - F[:, hi])
    out *= scale
    if j == l:
        out = np.maximum(out, VAR_FLOOR)
    return out
