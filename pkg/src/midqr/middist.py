"""Marginal mid-distribution functions for discrete data.

The mid-CDF of a random variable Y is ``G(y) = P(Y <= y) - 0.5 * P(Y = y)``,
a half-mass-shifted distribution function that stays well behaved in the
presence of ties.  Its generalized inverse, obtained by piecewise-linear
interpolation of the points ``(pi_j, y_j)`` with flat tails, is the
mid-quantile function.  This module provides the sample versions (built from
a tabulated sample) and the population versions (built from a finite or
truncated probability mass function), which serve as oracles for each other.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiscreteSample",
    "MidCdf",
    "Pmf",
    "tabulate",
    "mid_cdf",
    "mid_quantile",
    "population_mid_quantile",
]

#: Tail mass below which an infinite support is truncated before use.
TAIL_MASS = 1e-10


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DiscreteSample:
    """Tabulated sample: sorted distinct values with occurrence counts."""

    values: np.ndarray
    counts: np.ndarray
    n: int

    def __post_init__(self):
        values = _readonly(self.values)
        counts = _readonly(self.counts, dtype=int)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "counts", counts)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("values must be a nonempty 1-d array")
        if values.shape != counts.shape:
            raise ValueError("values and counts must have the same length")
        if not np.all(np.diff(values) > 0):
            raise ValueError("values must be strictly increasing")
        if np.any(counts < 1):
            raise ValueError("counts must all be >= 1")
        if counts.sum() != self.n:
            raise ValueError("counts must sum to n")


@dataclass(frozen=True)
class MidCdf:
    """Sample mid-CDF: value grid with CDF and mid-probability columns."""

    values: np.ndarray
    cdf: np.ndarray
    midprobs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        object.__setattr__(self, "cdf", _readonly(self.cdf))
        object.__setattr__(self, "midprobs", _readonly(self.midprobs))
        if not (self.values.shape == self.cdf.shape == self.midprobs.shape):
            raise ValueError("values, cdf and midprobs must share one shape")
        if np.any(np.diff(self.cdf) < 0) or self.cdf[-1] != 1.0:
            raise ValueError("cdf must be nondecreasing and end at 1")
        if not np.all(np.diff(self.midprobs) > 0):
            raise ValueError("midprobs must be strictly increasing")
        if self.midprobs[0] <= 0.0 or self.midprobs[-1] >= 1.0:
            raise ValueError("midprobs must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Pmf:
    """Finite probability mass function over a sorted support.

    Infinite supports must be truncated (keep points until the remaining
    tail mass drops below ``TAIL_MASS``) and renormalized before
    construction; `poisson_pmf` does this for the Poisson case.
    """

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", _readonly(self.support))
        object.__setattr__(self, "probs", _readonly(self.probs))
        if self.support.ndim != 1 or self.support.size == 0:
            raise ValueError("support must be a nonempty 1-d array")
        if self.support.shape != self.probs.shape:
            raise ValueError("support and probs must have the same length")
        if not np.all(np.diff(self.support) > 0):
            raise ValueError("support must be strictly increasing")
        if np.any(self.probs < 0):
            raise ValueError("probs must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must sum to 1 within 1e-12")

    def affine(self, scale=1.0, shift=0.0):
        """Pmf of ``scale * Y + shift`` for a positive scale."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return Pmf(scale * self.support + shift, self.probs)

    @classmethod
    def from_sample(cls, sample):
        """Empirical pmf of a tabulated sample."""
        return cls(sample.values, sample.counts / sample.n)


def discrete_uniform_pmf(a, b):
    """Uniform pmf on the integers ``a, a+1, ..., b`` inclusive."""
    if b < a:
        raise ValueError("need a <= b")
    k = b - a + 1
    return Pmf(np.arange(a, b + 1, dtype=float), np.full(k, 1.0 / k))


def bernoulli_pmf(mu):
    """Bernoulli pmf with success probability ``mu`` in (0, 1)."""
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must be in (0, 1)")
    return Pmf(np.array([0.0, 1.0]), np.array([1.0 - mu, mu]))


def poisson_pmf(mu, tail=TAIL_MASS):
    """Poisson pmf truncated where the remaining tail mass is below ``tail``.

    The retained probabilities are renormalized so they sum to one, which
    bounds the truncation error of downstream mid-quantile evaluations.
    """
    from scipy import stats

    if mu <= 0:
        raise ValueError("mu must be positive")
    upper = int(stats.poisson.ppf(1.0 - tail, mu)) + 1
    support = np.arange(0, upper + 1, dtype=float)
    probs = stats.poisson.pmf(support, mu)
    cum = np.cumsum(probs)
    cut = int(np.searchsorted(cum, 1.0 - tail)) + 1
    support, probs = support[:cut], probs[:cut]
    return Pmf(support, probs / probs.sum())


def tabulate(raw_sample):
    """Tabulate a raw sample into sorted distinct values with counts.

    Raises ``ValueError`` on empty input or non-finite values.
    """
    arr = np.asarray(raw_sample, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample contains non-finite values")
    values, counts = np.unique(arr, return_counts=True)
    return DiscreteSample(values, counts, arr.size)


def mid_cdf(sample):
    """Sample mid-CDF of a tabulated sample.

    Computes ``F(z_j) = cum_count_j / n`` and the mid-probabilities
    ``pi_j = F(z_j) - 0.5 * count_j / n``, which are strictly increasing.
    """
    phat = sample.counts / sample.n
    cdf = np.cumsum(sample.counts) / sample.n
    midprobs = cdf - 0.5 * phat
    return MidCdf(sample.values, cdf, midprobs)


def mid_quantile(midcdf, p):
    """Sample mid-quantile: piecewise-linear inverse of the mid-CDF.

    Interpolates the knots ``(pi_j, z_j)`` linearly and clamps to the
    endpoint values outside ``[pi_1, pi_k]``.  Accepts a scalar or an array
    of probabilities in (0, 1).
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    out = np.interp(p_arr, midcdf.midprobs, midcdf.values)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def population_mid_quantile(pmf, p):
    """Population mid-quantile of a finite pmf at level ``p``.

    Implements the explicit case analysis of the inverse: endpoint values
    below ``pi_1`` and above ``pi_k``, exact support points at the knots,
    and the convex combination ``(1 - gamma) * y_j + gamma * y_{j+1}`` with
    ``gamma`` solved from ``p = (1 - gamma) * pi_j + gamma * pi_{j+1}`` in
    between.  Kept deliberately independent of `mid_quantile` so the two
    can cross-check each other.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    y = pmf.support
    pi = np.cumsum(pmf.probs) - 0.5 * pmf.probs
    if p < pi[0]:
        return float(y[0])
    if p > pi[-1]:
        return float(y[-1])
    j = int(np.searchsorted(pi, p))
    if pi[j] == p:
        return float(y[j])
    gamma = (p - pi[j - 1]) / (pi[j] - pi[j - 1])
    return float((1.0 - gamma) * y[j - 1] + gamma * y[j])
