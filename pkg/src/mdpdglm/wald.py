"""Wald-type tests built on the MDPDE.

For a linear hypothesis ``m(eta) = L beta - l0 = 0`` with Jacobian ``M``
(``L'`` stacked over a zero row when phi is unknown) the statistic is

    W_n = n m(eta_hat)' [M' Sigma_alpha(eta_hat) M]^-1 m(eta_hat)

with a chi-square(r) null law.  Under contiguous alternatives
``eta_n = eta_0 + d / sqrt(n)`` it is noncentral chi-square with
noncentrality ``d' M [M' Sigma M]^-1 M' d``.  The fixed-alternative power
is a normal approximation in ``sqrt(n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .asymp import sandwich_analytic
from .errors import DomainError, Singular
from .numerics import chisq_sf, chisq_upper_point, check_condition, normal_cdf, normal_quantile, solve_spd

__all__ = [
    "LinearHypothesis",
    "WaldResult",
    "wald_statistic",
    "poisson_weights",
    "noncentral_chisq_sf",
    "q_form",
    "sigma_fixed_alternative",
    "power_fixed_alternative",
    "required_sample_size",
    "noncentrality",
    "contiguous_power",
    "contaminated_contiguous_power",
    "DEFAULT_LEVELS",
]

DEFAULT_LEVELS = (0.01, 0.05, 0.10)
SERIES_MASS = 1e-12
SERIES_MAX_TERMS = 5000
NULL_TOL = 1e-10


@dataclass(frozen=True)
class LinearHypothesis:
    """``H0: L beta = l0`` with ``L`` of shape (r, k) and ``l0`` of length r."""

    L: np.ndarray
    l0: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        l0 = np.atleast_1d(np.asarray(self.l0, dtype=float)).reshape(-1)
        if L.shape[0] != l0.shape[0]:
            raise DomainError(f"L has {L.shape[0]} rows but l0 has {l0.shape[0]} entries")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(l0))):
            raise DomainError("hypothesis entries must be finite")
        r, k = L.shape
        if np.linalg.matrix_rank(L) != r or r > k:
            raise DomainError("L must have full row rank r <= k")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "l0", l0)

    @classmethod
    def simple(cls, beta0):
        """``beta = beta0`` for every coordinate."""
        beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
        return cls(np.eye(beta0.size), beta0)

    @property
    def r(self):
        return self.L.shape[0]

    @property
    def k(self):
        return self.L.shape[1]

    def _check(self, model, eta):
        beta, _ = model.split(eta)
        if np.asarray(beta).size != self.k:
            raise DomainError(f"hypothesis is for k={self.k} but beta has length {np.asarray(beta).size}")
        return beta

    def m(self, model, eta):
        """``L beta - l0``."""
        return self.L @ self._check(model, eta) - self.l0

    def jacobian(self, model):
        """``M = d m / d eta``, shape (p, r)."""
        if model.dispersion_known:
            return self.L.T.copy()
        return np.vstack([self.L.T, np.zeros((1, self.r))])

    def transformed(self, A):
        """The equivalent hypothesis ``(A L, A l0)``."""
        A = np.asarray(A, dtype=float)
        return LinearHypothesis(A @ self.L, A @ self.l0)


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    reject_at: dict = field(default_factory=dict)


def _middle(M, sigma):
    """``M' Sigma M`` with the conditioning guard."""
    mid = M.T @ sigma @ M
    mid = 0.5 * (mid + mid.T)
    check_condition(mid)
    return mid


def _quadratic(vec, mid):
    return float(vec @ solve_spd(mid, vec))


def wald_statistic(fit, hypothesis, levels=DEFAULT_LEVELS):
    """Wald-type statistic of a converged :class:`~mdpdglm.estim.MdpdeFit`.

    Raises
    ------
    Singular
        ``M' Sigma M`` is ill-conditioned.
    """
    if not fit.converged:
        raise DomainError("the fit did not converge")
    if fit.sigma_hat is None:
        raise DomainError("the fit carries no covariance estimate")
    model = fit.model
    m = hypothesis.m(model, fit.eta_hat)
    M = hypothesis.jacobian(model)
    stat = fit.n * _quadratic(m, _middle(M, fit.sigma_hat))
    stat = max(stat, 0.0)
    p = chisq_sf(hypothesis.r, stat)
    reject = {float(a): bool(p < a) for a in levels}
    return WaldResult(stat, hypothesis.r, float(p), reject)


# -- noncentral chi-square ---------------------------------------------------

def poisson_weights(delta, mass=SERIES_MASS, max_terms=SERIES_MAX_TERMS):
    """Indices ``v`` and weights ``exp(-delta/2) (delta/2)^v / v!`` of the mixture.

    The window is centred on the mode and widened until the weights outside
    it carry less than ``mass``, or until ``max_terms`` indices are used.
    """
    delta = float(delta)
    if not delta >= 0:
        raise DomainError("noncentrality must be nonnegative")
    lam = 0.5 * delta
    if lam == 0:
        return np.zeros(1, dtype=np.int64), np.ones(1)
    pois = stats.poisson(lam)
    lo = int(pois.ppf(0.5 * mass))
    hi = int(pois.isf(0.5 * mass)) + 1
    if hi - lo + 1 > max_terms:
        mode = int(math.floor(lam))
        lo = max(0, mode - max_terms // 2)
        hi = lo + max_terms - 1
    v = np.arange(lo, hi + 1)
    return v, pois.pmf(v)


def noncentral_chisq_sf(r, delta, c):
    """``P(chi2_r(delta) > c)`` as a Poisson mixture of central tails."""
    if r <= 0:
        raise DomainError("degrees of freedom must be positive")
    if not c >= 0:
        raise DomainError("c must be nonnegative")
    if c == 0:
        return 1.0
    v, w = poisson_weights(delta)
    return float(min(1.0, np.sum(w * chisq_sf(r + 2 * v, c))))


# -- fixed alternatives ------------------------------------------------------

def q_form(model, covariate_dist, hypothesis, alpha, eta1, eta2):
    """``m(eta1)' [M' Sigma_alpha(eta2) M]^-1 m(eta1)``."""
    sigma = sandwich_analytic(model, covariate_dist, eta2, alpha).Sigma
    M = hypothesis.jacobian(model)
    return _quadratic(hypothesis.m(model, eta1), _middle(M, sigma))


def _off_null(model, hypothesis, eta):
    m = hypothesis.m(model, eta)
    if np.max(np.abs(m)) <= NULL_TOL:
        raise DomainError("eta_star satisfies the null hypothesis; m(eta_star) must be nonzero")


def sigma_fixed_alternative(model, covariate_dist, eta_star, hypothesis, alpha, slots="both"):
    """Return ``(q, sigma^2)`` at ``eta_star`` for the normal power approximation.

    The gradient of ``eta -> q_eta(eta)`` is taken by central differences
    with step ``1e-5 (1 + |eta_j|)``.  ``slots="first"`` holds the covariance
    slot fixed at ``eta_star`` instead.
    """
    if slots not in ("both", "first"):
        raise DomainError("slots must be 'both' or 'first'")
    eta_star = np.asarray(eta_star, dtype=float)
    _off_null(model, hypothesis, eta_star)
    sigma_star = sandwich_analytic(model, covariate_dist, eta_star, alpha).Sigma
    M = hypothesis.jacobian(model)
    q = _quadratic(hypothesis.m(model, eta_star), _middle(M, sigma_star))
    grad = np.empty(eta_star.size)
    for j in range(eta_star.size):
        h = 1e-5 * (1.0 + abs(eta_star[j]))
        up, dn = eta_star.copy(), eta_star.copy()
        up[j] += h
        dn[j] -= h
        if slots == "both":
            fu = q_form(model, covariate_dist, hypothesis, alpha, up, up)
            fd = q_form(model, covariate_dist, hypothesis, alpha, dn, dn)
        else:
            mid = _middle(M, sigma_star)
            fu = _quadratic(hypothesis.m(model, up), mid)
            fd = _quadratic(hypothesis.m(model, dn), mid)
        grad[j] = (fu - fd) / (2.0 * h)
    s2 = float(grad @ sigma_star @ grad)
    if not s2 > 0:
        raise Singular("zero variance in the power approximation")
    return q, s2


def power_fixed_alternative(model, covariate_dist, eta_star, hypothesis, n, level, alpha,
                            slots="both"):
    """Approximate power ``1 - Phi((c / sqrt(n) - sqrt(n) q) / sigma)`` at ``eta_star``."""
    if n < 1:
        raise DomainError("n must be positive")
    q, s2 = sigma_fixed_alternative(model, covariate_dist, eta_star, hypothesis, alpha, slots)
    c = chisq_upper_point(hypothesis.r, level)
    z = (c / math.sqrt(n) - math.sqrt(n) * q) / math.sqrt(s2)
    return float(1.0 - normal_cdf(z))


def required_sample_size(model, covariate_dist, eta_star, hypothesis, target_power, level, alpha,
                         slots="both"):
    """Smallest integer above the root ``n*`` of ``power(n) = target_power``.

    For ``target_power >= 1/2`` this is ``(A + B + sqrt(A (A + 2B))) / (2 q^2)``
    with ``A = sigma^2 z^2``, ``B = 2 c q`` and ``z = Phi^-1(1 - target_power)``;
    below one half the sign of ``z`` selects the other branch of the same
    quadratic in ``sqrt(n)``.
    """
    if not 0.0 < target_power < 1.0:
        raise DomainError("target power must lie in (0, 1)")
    q, s2 = sigma_fixed_alternative(model, covariate_dist, eta_star, hypothesis, alpha, slots)
    c = chisq_upper_point(hypothesis.r, level)
    z = normal_quantile(1.0 - target_power)
    A = s2 * z**2
    B = 2.0 * c * q
    n_star = (A + B - math.copysign(1.0, z) * math.sqrt(A * (A + 2.0 * B))) / (2.0 * q**2)
    return int(math.floor(n_star)) + 1


# -- contiguous alternatives -------------------------------------------------

def _check_null(model, hypothesis, eta0):
    m = hypothesis.m(model, eta0)
    if np.max(np.abs(m)) > NULL_TOL * (1.0 + np.max(np.abs(hypothesis.l0))):
        raise DomainError("eta0 does not satisfy the null hypothesis")


def _direction(model, hypothesis, d, p):
    """Direction in eta space; a scalar is repeated over beta, phi gets 0 when omitted."""
    if d is None:
        d = 0.0
    d = np.asarray(d, dtype=float)
    if d.ndim == 0:
        d = np.full(hypothesis.k, float(d))
    if d.size == p:
        return d
    if not model.dispersion_known and d.size == p - 1:
        return np.append(d, 0.0)
    raise DomainError(f"direction d must have length {p}")


def noncentrality(M, sigma, d=None, d_star=None):
    """``d' M [M' Sigma M]^-1 M' d``, or ``d*' [M' Sigma M]^-1 d*`` given ``d*``."""
    mid = _middle(M, sigma)
    if (d is None) == (d_star is None):
        raise DomainError("give exactly one of d and d_star")
    t = M.T @ d if d_star is None else np.atleast_1d(np.asarray(d_star, dtype=float))
    return max(_quadratic(t, mid), 0.0)


def contiguous_power(model, covariate_dist, eta0, hypothesis, d=None, level=0.05, alpha=0.0,
                     d_star=None, sigma=None):
    """Asymptotic power under ``eta_n = eta0 + d / sqrt(n)``.

    ``d_star`` gives the alternative directly on the scale of ``m``
    (``m(eta_n) = d* / sqrt(n)``).  ``sigma`` may carry a precomputed
    ``Sigma_alpha(eta0)``.
    """
    eta0 = np.asarray(eta0, dtype=float)
    _check_null(model, hypothesis, eta0)
    if sigma is None:
        sigma = sandwich_analytic(model, covariate_dist, eta0, alpha).Sigma
    M = hypothesis.jacobian(model)
    if d_star is None:
        delta = noncentrality(M, sigma, d=_direction(model, hypothesis, d, eta0.size))
    else:
        delta = noncentrality(M, sigma, d_star=d_star)
    return noncentral_chisq_sf(hypothesis.r, delta, chisq_upper_point(hypothesis.r, level))


def contaminated_contiguous_power(model, covariate_dist, eta0, hypothesis, d, epsilon, point,
                                  level=0.05, alpha=0.0):
    """Asymptotic power when the contiguous alternative also carries
    ``epsilon / sqrt(n)`` point-mass contamination at ``point``.

    The shift in the estimator becomes ``d + epsilon * IF(point)``.  With
    ``d = 0`` this is the contaminated level.
    """
    from .robust import if_estimator

    if not epsilon >= 0:
        raise DomainError("epsilon must be nonnegative")
    eta0 = np.asarray(eta0, dtype=float)
    _check_null(model, hypothesis, eta0)
    mats = sandwich_analytic(model, covariate_dist, eta0, alpha)
    d = _direction(model, hypothesis, d, eta0.size)
    shift = d
    if epsilon > 0:
        shift = d + epsilon * if_estimator(model, covariate_dist, eta0, alpha, point, matrices=mats)
    M = hypothesis.jacobian(model)
    delta = noncentrality(M, mats.Sigma, d=shift)
    return noncentral_chisq_sf(hypothesis.r, delta, chisq_upper_point(hypothesis.r, level))
