"""Transformation families linking the response scale to the linear predictor.

A family bundles the forward map ``h`` (response scale -> linear predictor
scale), its inverse, and the first two derivatives of the inverse with
respect to the linear predictor.  The regression model is linear on the
``h`` scale, so predictions on the response scale go through ``hinv``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "TransformationFamily",
    "identity_link",
    "linear_link",
    "log_link",
    "logit_link",
    "get_link",
]


class LinkDomainError(ValueError):
    """Raised when a value falls outside the forward map's domain."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows if rows is None else list(rows)


@dataclass(frozen=True)
class TransformationFamily:
    """Monotone differentiable transformation with inverse derivatives.

    ``h`` maps response-scale values into linear-predictor space, ``hinv``
    maps back, and ``d1hinv``/``d2hinv`` are the first and second
    derivatives of ``hinv`` with respect to the linear predictor.  The
    open interval ``domain`` restricts the argument of ``h``.
    """

    name: str
    h: callable
    hinv: callable
    d1hinv: callable
    d2hinv: callable
    domain: tuple = (-np.inf, np.inf)
    params: dict = field(default_factory=dict)

    def in_domain(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.domain
        return (u > lo) & (u < hi)

    def check_domain(self, u, context="value"):
        """Validate ``u`` against the domain, listing offending rows."""
        ok = self.in_domain(u)
        if np.all(ok):
            return
        rows = np.flatnonzero(~np.atleast_1d(ok))
        lo, hi = self.domain
        hint = ""
        if self.name == "log":
            hint = (" Consider refitting with a positive response offset,"
                    " e.g. log_link(offset=1.0).")
        raise LinkDomainError(
            f"{context} outside the domain ({lo}, {hi}) of '{self.name}' "
            f"for rows {rows.tolist()[:20]}"
            f"{'...' if rows.size > 20 else ''}.{hint}",
            rows=rows,
        )


def identity_link():
    """Identity transformation: the model is linear on the response scale."""
    return TransformationFamily(
        name="identity",
        h=lambda u: np.asarray(u, dtype=float),
        hinv=lambda eta: np.asarray(eta, dtype=float),
        d1hinv=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        d2hinv=lambda eta: np.zeros_like(np.asarray(eta, dtype=float)),
    )


def linear_link(a, b=0.0):
    """Affine transformation ``h(u) = a * u + b`` with positive slope."""
    if a <= 0:
        raise ValueError("slope a must be positive")
    return TransformationFamily(
        name="linear",
        h=lambda u: a * np.asarray(u, dtype=float) + b,
        hinv=lambda eta: (np.asarray(eta, dtype=float) - b) / a,
        d1hinv=lambda eta: np.full_like(np.asarray(eta, dtype=float), 1.0 / a),
        d2hinv=lambda eta: np.zeros_like(np.asarray(eta, dtype=float)),
        params={"a": a, "b": b},
    )


def log_link(offset=0.0):
    """Log transformation ``h(u) = log(u + offset)`` for count responses.

    The default ``offset=0`` matches the plain log-linear model; a positive
    offset shifts the domain left, which is the standard remedy when
    interpolated response values can touch zero.
    """
    if offset < 0:
        raise ValueError("offset must be nonnegative")
    return TransformationFamily(
        name="log",
        h=lambda u: np.log(np.asarray(u, dtype=float) + offset),
        hinv=lambda eta: np.exp(np.asarray(eta, dtype=float)) - offset,
        d1hinv=lambda eta: np.exp(np.asarray(eta, dtype=float)),
        d2hinv=lambda eta: np.exp(np.asarray(eta, dtype=float)),
        domain=(-offset, np.inf),
        params={"offset": offset},
    )


def logit_link():
    """Logit transformation for responses interpolated inside (0, 1)."""

    def d1(eta):
        s = expit(np.asarray(eta, dtype=float))
        return s * (1.0 - s)

    def d2(eta):
        s = expit(np.asarray(eta, dtype=float))
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    return TransformationFamily(
        name="logit",
        h=lambda u: np.log(np.asarray(u, dtype=float) / (1.0 - np.asarray(u, dtype=float))),
        hinv=lambda eta: expit(np.asarray(eta, dtype=float)),
        d1hinv=d1,
        d2hinv=d2,
        domain=(0.0, 1.0),
    )


_REGISTRY = {
    "identity": identity_link,
    "log": log_link,
    "logit": logit_link,
}


def get_link(name):
    """Look up a transformation family by name, or pass one through."""
    if isinstance(name, TransformationFamily):
        return name
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(
            f"unknown link '{name}'; choose from {sorted(_REGISTRY)}"
        ) from None
