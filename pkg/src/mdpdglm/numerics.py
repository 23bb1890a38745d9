"""Numerical substrate: chi-square and normal distribution functions,
Gauss-Hermite rules, small SPD solves and compensated sums.

Everything here is a thin, checked layer over ``scipy.special`` and
``scipy.linalg`` so that callers get domain errors from this package
rather than silent NaNs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .errors import DomainError, NotPositiveDefinite, Singular

__all__ = [
    "QuadratureRule",
    "chisq_sf",
    "chisq_quantile",
    "chisq_upper_point",
    "normal_cdf",
    "normal_quantile",
    "solve_spd",
    "check_condition",
    "gauss_hermite",
    "fsum",
]

CONDITION_LIMIT = 1e12


def chisq_sf(r, c):
    """Upper tail ``P(chi2_r > c)`` via the regularized incomplete gamma."""
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(r <= 0):
        raise DomainError("degrees of freedom must be positive")
    if np.any(c < 0):
        raise DomainError("chi-square argument must be nonnegative")
    out = special.gammaincc(r / 2.0, c / 2.0)
    return out.item() if out.ndim == 0 else out


def chisq_quantile(r, p):
    """Lower-tail quantile: the ``c`` with ``P(chi2_r <= c) = p``."""
    if r <= 0:
        raise DomainError("degrees of freedom must be positive")
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    # invert whichever tail is smaller to keep relative accuracy
    if p <= 0.5:
        return float(2.0 * special.gammaincinv(r / 2.0, p))
    return float(2.0 * special.gammainccinv(r / 2.0, 1.0 - p))


def chisq_upper_point(r, level):
    """Critical value ``chi2_{r,level}``, i.e. ``P(chi2_r > c) = level``."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    return float(2.0 * special.gammainccinv(r / 2.0, level))


def normal_cdf(x):
    out = special.ndtr(np.asarray(x, dtype=float))
    return out.item() if np.ndim(out) == 0 else out


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("p must lie in (0, 1)")
    out = special.ndtri(p)
    return out.item() if out.ndim == 0 else out


def check_condition(A, limit=CONDITION_LIMIT):
    """Raise :class:`Singular` when ``cond(A)`` exceeds ``limit``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise Singular("matrix has non-finite entries")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > limit:
        raise Singular(f"matrix condition number {cond:.3g} exceeds {limit:.0e}")
    return cond


def solve_spd(A, b, check=True):
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise DomainError("matrix must be square")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * np.abs(A).max(initial=1.0)):
        raise NotPositiveDefinite("matrix is not symmetric")
    if check:
        check_condition(A)
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    return linalg.cho_solve(factor, b)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for ``int g(t) exp(-t**2) dt``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "gauss-hermite"

    @property
    def n(self):
        return len(self.nodes)

    def integrate(self, g):
        return float(np.dot(self.weights, g(self.nodes)))


@lru_cache(maxsize=32)
def _hermgauss(n):
    t, w = np.polynomial.hermite.hermgauss(n)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def gauss_hermite(n):
    """Physicists' Gauss-Hermite rule with ``n`` nodes (weight ``exp(-t^2)``)."""
    if n < 1:
        raise DomainError("need at least one node")
    t, w = _hermgauss(int(n))
    return QuadratureRule(t, w)


def fsum(values):
    """Exactly rounded sum of an iterable of floats."""
    return math.fsum(values)
