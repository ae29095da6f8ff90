"""Second estimation step: regression coefficients from mid-probabilities.

Each observation carries an interpolated conditional mid-CDF (piecewise
linear through its mid-probabilities over the shared response grid, flat
outside).  Fitting minimizes the mean squared gap between the target level
``p`` and the interpolated mid-CDF evaluated at the inverse-transformed
linear predictor.  When ``p`` lies inside the admissible range, every row
can be inverted and the minimizer has the closed least-squares form;
otherwise a damped Newton search with a golden-section fallback is used.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .links import get_link

__all__ = [
    "AdmissibleRange",
    "InterpolatedMidCdf",
    "BracketError",
    "FitError",
    "FitDiagnostics",
    "admissible_range",
    "interpolate",
    "locate_bracket",
    "closed_form_fit",
    "objective",
    "gradient",
    "hessian",
    "numerical_fit",
    "predict",
]


class BracketError(ValueError):
    """The target level falls outside a row's mid-probability range."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class FitError(RuntimeError):
    """Numerical fit failed; carries the final optimizer state."""

    def __init__(self, message, beta=None, grad_norm=None, objective=None,
                 iterations=None):
        super().__init__(message)
        self.beta = beta
        self.grad_norm = grad_norm
        self.objective = objective
        self.iterations = iterations


@dataclass(frozen=True)
class AdmissibleRange:
    """Quantile levels at which every row's mid-CDF can be inverted."""

    lo: float
    hi: float

    @property
    def empty(self):
        return not self.lo < self.hi

    def contains(self, p):
        """Whether ``p`` is admissible; endpoints count as inside."""
        return (not self.empty) and self.lo <= p <= self.hi

    def nearest(self, p):
        if self.empty:
            raise ValueError("admissible range is empty")
        return min(max(p, self.lo), self.hi)


def admissible_range(pi):
    """Componentwise max of first and min of last mid-probabilities."""
    return AdmissibleRange(float(pi.pi[:, 0].max()), float(pi.pi[:, -1].min()))


@dataclass(frozen=True)
class InterpolatedMidCdf:
    """One observation's piecewise-linear mid-CDF over the response grid."""

    grid: np.ndarray
    pi_row: np.ndarray
    slopes: np.ndarray
    row_index: int = None

    def __post_init__(self):
        for name in ("grid", "pi_row", "slopes"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.pi_row.shape != self.grid.shape:
            raise ValueError("pi_row must match the grid")
        if self.slopes.shape != (max(self.grid.size - 1, 0),):
            raise ValueError("slopes must have one entry per grid segment")
        if self.slopes.size and not np.all(
            np.isfinite(self.slopes) & (self.slopes > 0)
        ):
            raise ValueError("slopes must be finite and positive")

    @classmethod
    def from_matrix(cls, pi, i):
        grid, row = pi.grid, pi.pi[i]
        slopes = np.diff(row) / np.diff(grid) if grid.size > 1 else np.empty(0)
        return cls(grid, row, slopes, row_index=i)

    def evaluate(self, eta):
        return np.interp(eta, self.grid, self.pi_row)


def interpolate(icdf, eta):
    """Evaluate the interpolated mid-CDF; flat outside the grid."""
    out = icdf.evaluate(eta)
    return float(out) if np.ndim(eta) == 0 else out


def locate_bracket(icdf, p):
    """Index of the grid segment whose mid-probabilities bracket ``p``.

    Returns the 0-based ``j`` with ``pi[j] < p < pi[j+1]``.  When ``p``
    hits a knot exactly, the segment starting at that knot is returned
    (the inversion then lands on the knot), except at the top knot where
    the final segment is used.
    """
    row = icdf.pi_row
    k = row.size
    if p < row[0] or p > row[-1] or k < 2:
        where = "" if icdf.row_index is None else f" (row {icdf.row_index})"
        raise BracketError(
            f"level {p} outside the mid-probability range "
            f"[{row[0]:.6g}, {row[-1]:.6g}]{where}",
            row=icdf.row_index,
        )
    j = int(np.searchsorted(row, p))
    if row[j] == p:
        return j if j < k - 1 else k - 2
    return j - 1


def _u_values(pi, p, link):
    """Inverted mid-CDF values on the transformation scale, one per row."""
    grid = pi.grid
    n, k = pi.n, pi.k
    diffs = np.diff(grid)
    u_arg = np.empty(n)
    brackets = np.empty(n, dtype=int)
    for i in range(n):
        row = pi.pi[i]
        if p < row[0] or p > row[-1] or k < 2:
            raise BracketError(
                f"level {p} outside the mid-probability range of row {i}; "
                "restrict p to the admissible range or use numerical_fit",
                row=i,
            )
        j = int(np.searchsorted(row, p))
        if row[j] == p:
            j = j if j < k - 1 else k - 2
        else:
            j -= 1
        slope = (row[j + 1] - row[j]) / diffs[j]
        u_arg[i] = (p - row[j]) / slope + grid[j]
        brackets[i] = j
    link.check_domain(u_arg, context="interpolated response value")
    return link.h(u_arg), u_arg, brackets


def closed_form_fit(X, pi, p, link="identity"):
    """Least-squares coefficients from the rowwise inverted mid-CDF.

    Requires ``p`` inside the admissible range so every row brackets the
    level; raises `BracketError` otherwise.  The design matrix must have
    full column rank.
    """
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if X.shape[0] != pi.n:
        raise ValueError("design matrix rows must match the mid-CDF matrix")
    u, _, _ = _u_values(pi, p, link)
    beta, _, rank, _ = np.linalg.lstsq(X, u, rcond=None)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError(
            f"design matrix is rank deficient (rank {rank} < {X.shape[1]})"
        )
    return beta


def _interp_state(beta, X, pi, link):
    """Shared quantities for the objective and its derivatives.

    Returns the linear predictor, the interpolated mid-CDF value per row,
    and the local slope (zero for observations in the flat tails).
    """
    beta = np.asarray(beta, dtype=float)
    lp = X @ beta
    eta = link.hinv(lp)
    grid = pi.grid
    k = grid.size
    if k == 1:
        G = pi.pi[:, 0].copy()
        slope = np.zeros_like(G)
        return lp, eta, G, slope
    seg = np.searchsorted(grid, eta, side="right") - 1
    seg = np.clip(seg, 0, k - 2)
    rows = np.arange(pi.n)
    pi_lo = pi.pi[rows, seg]
    pi_hi = pi.pi[rows, seg + 1]
    b = (pi_hi - pi_lo) / (grid[seg + 1] - grid[seg])
    G = pi_lo + b * (eta - grid[seg])
    lo_tail = eta < grid[0]
    hi_tail = eta >= grid[-1]
    G[lo_tail] = pi.pi[lo_tail, 0]
    G[hi_tail] = pi.pi[hi_tail, -1]
    slope = b
    slope[lo_tail | hi_tail] = 0.0
    return lp, eta, G, slope


def objective(beta, X, pi, p, link="identity"):
    """Mean squared gap between ``p`` and the interpolated mid-CDF."""
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, _, G, _ = _interp_state(beta, X, pi, link)
    r = p - G
    return float(np.mean(r * r))


def gradient(beta, X, pi, p, link="identity"):
    """Analytic gradient of `objective`; flat-tail rows contribute zero."""
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lp, _, G, slope = _interp_state(beta, X, pi, link)
    r = p - G
    w = r * slope * link.d1hinv(lp)
    return (-2.0 / X.shape[0]) * (X.T @ w)


def hessian(beta, X, pi, p, link="identity"):
    """Analytic Hessian of `objective`.

    Combines the squared-slope term with the curvature term proportional
    to the residual and the second derivative of the inverse
    transformation; under the identity transformation it reduces to
    ``(2/n) X' diag(slope**2) X`` over interior observations.
    """
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lp, _, G, slope = _interp_state(beta, X, pi, link)
    r = p - G
    d1 = link.d1hinv(lp)
    d2 = link.d2hinv(lp)
    c = (slope * d1) ** 2 - r * slope * d2
    return (2.0 / X.shape[0]) * ((X * c[:, None]).T @ X)


@dataclass
class FitDiagnostics:
    """State of a numerical fit: convergence, method, and plateau flags."""

    converged: bool
    iterations: int
    grad_norm: float
    objective: float
    method: str
    lower_plateau: bool = False
    upper_plateau: bool = False


def _fallback_init(X, pi, p, link):
    """Least-squares starting point from rowwise clamped inversions."""
    n, k = pi.n, pi.k
    grid = pi.grid
    u_arg = np.empty(n)
    for i in range(n):
        row = pi.pi[i]
        if k < 2:
            u_arg[i] = grid[0]
            continue
        pc = min(max(p, row[0]), row[-1])
        j = int(np.searchsorted(row, pc))
        if row[j] == pc:
            j = j if j < k - 1 else k - 2
        else:
            j -= 1
        slope = (row[j + 1] - row[j]) / (grid[j + 1] - grid[j])
        u_arg[i] = (pc - row[j]) / slope + grid[j]
    lo, hi = link.domain
    if np.isfinite(lo) or np.isfinite(hi):
        span = (hi - lo) if np.isfinite(hi) and np.isfinite(lo) else 1.0
        u_arg = np.clip(u_arg,
                        lo + 1e-3 * span if np.isfinite(lo) else -np.inf,
                        hi - 1e-3 * span if np.isfinite(hi) else np.inf)
    beta, *_ = np.linalg.lstsq(X, link.h(u_arg), rcond=None)
    return beta


def _newton_direction(H, g):
    q = H.shape[0]
    ridge = 0.0
    for _ in range(6):
        try:
            A = H + ridge * np.eye(q)
            np.linalg.cholesky(A)
            return np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            base = abs(np.trace(H)) / q
            ridge = max(ridge * 10.0, 1e-8 * base if base > 0 else 1e-8)
    return None


def _golden_section(f, a, b, tol):
    phi = (5.0 ** 0.5 - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def numerical_fit(X, pi, p, link="identity", init=None, y=None,
                  max_iter=500, grad_tol=1e-8, step_tol=1e-10):
    """Minimize the objective by damped Newton with analytic derivatives.

    Valid for any ``p`` in (0, 1), including levels outside the admissible
    range.  Starts from the closed-form solution at the nearest admissible
    level when one exists, otherwise from a least-squares fit of the
    transformed (offset) response when ``y`` is supplied, or of rowwise
    clamped inversions.  Newton steps are damped by a backtracking line
    search; if a step fails to decrease the objective, one sweep of
    coordinate-wise golden-section search is interposed.  Returns the
    coefficients and a `FitDiagnostics` record.
    """
    link = get_link(link)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    q = X.shape[1]

    rng = admissible_range(pi)
    if init is not None:
        beta = np.asarray(init, dtype=float).copy()
    elif not rng.empty:
        try:
            beta = closed_form_fit(X, pi, rng.nearest(p), link)
        except Exception:
            beta = _fallback_init(X, pi, p, link)
    elif y is not None:
        lo, hi = link.domain
        u = np.asarray(y, dtype=float) + 0.5
        if np.isfinite(lo) or np.isfinite(hi):
            span = (hi - lo) if np.isfinite(hi) and np.isfinite(lo) else 1.0
            u = np.clip(u,
                        lo + 1e-2 * span if np.isfinite(lo) else -np.inf,
                        hi - 1e-2 * span if np.isfinite(hi) else np.inf)
        beta, *_ = np.linalg.lstsq(X, link.h(u), rcond=None)
    else:
        beta = _fallback_init(X, pi, p, link)

    f = lambda b: objective(b, X, pi, p, link)
    fval = f(beta)
    method = "newton"
    last_step = 0.0
    iterations = 0

    while iterations < max_iter:
        g = gradient(beta, X, pi, p, link)
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= grad_tol and (iterations == 0 or last_step <= step_tol):
            break
        H = hessian(beta, X, pi, p, link)
        direction = _newton_direction(H, g)
        moved = False
        if direction is not None and np.all(np.isfinite(direction)):
            t = 1.0
            slope = float(g @ direction)
            while t >= 1e-14:
                cand = beta + t * direction
                fcand = f(cand)
                if fcand <= fval + 1e-4 * t * slope or fcand < fval:
                    beta, fval = cand, fcand
                    last_step = float(np.max(np.abs(t * direction)))
                    moved = True
                    break
                t *= 0.5
        if not moved:
            # coordinate-wise golden-section sweep around the current point
            method = "newton+golden"
            before = fval
            for h in range(q):
                span = 1.0 + abs(beta[h])

                def f1(v, h=h):
                    b = beta.copy()
                    b[h] = v
                    return f(b)

                vstar = _golden_section(
                    f1, beta[h] - span, beta[h] + span,
                    1e-12 * (1.0 + abs(beta[h])),
                )
                if f1(vstar) < fval:
                    last_step = max(last_step, abs(vstar - beta[h]))
                    beta[h] = vstar
                    fval = f(beta)
            if fval >= before - 1e-18:
                # no direction improves: flat region or converged plateau
                last_step = 0.0
                iterations += 1
                g = gradient(beta, X, pi, p, link)
                if float(np.max(np.abs(g))) <= grad_tol:
                    break
                raise FitError(
                    "numerical fit stalled before reaching tolerance",
                    beta=beta, grad_norm=float(np.max(np.abs(g))),
                    objective=fval, iterations=iterations,
                )
        iterations += 1
    else:
        g = gradient(beta, X, pi, p, link)
        raise FitError(
            f"no convergence after {max_iter} iterations",
            beta=beta, grad_norm=float(np.max(np.abs(g))),
            objective=fval, iterations=max_iter,
        )

    _, eta, _, _ = _interp_state(beta, X, pi, link)
    lower = bool(np.all(eta <= pi.grid[0]))
    upper = bool(np.all(eta >= pi.grid[-1]))
    if lower and q == 1 and np.ptp(X[:, 0]) == 0.0 and X[0, 0] != 0.0:
        # intercept-only lower plateau: report its upper edge
        edge = np.array([link.h(pi.grid[0]) / X[0, 0]])
        if np.isfinite(edge[0]) and f(edge) <= fval + 1e-12:
            beta, fval = edge, f(edge)

    diag = FitDiagnostics(
        converged=True,
        iterations=iterations,
        grad_norm=float(np.max(np.abs(gradient(beta, X, pi, p, link)))),
        objective=fval,
        method=method,
        lower_plateau=lower,
        upper_plateau=upper,
    )
    if lower or upper:
        warnings.warn(
            "all observations fell in a flat tail of the interpolated "
            "mid-CDF; the optimum is a plateau", RuntimeWarning,
        )
    return beta, diag


def predict(model, xnew, p, scale="response"):
    """Predicted conditional mid-quantile at a fitted level.

    ``scale='response'`` applies the inverse transformation; ``'linear'``
    returns the linear predictor itself.
    """
    beta = model.coefficients(p)
    xnew = np.atleast_2d(np.asarray(xnew, dtype=float))
    lp = xnew @ beta
    out = lp if scale == "linear" else model.link.hinv(lp)
    return out if out.size > 1 else float(out[0])
