"""Sandwich asymptotics of the MDPDE under random design.

``J`` and ``K`` are integrals over the covariate distribution ``G`` of
gamma-weighted outer products of ``x``::

    J = int [[g11(x) x x', g12(x) x], [g12(x) x', g22(x)]] dG(x)        (alpha)
    K = int [[(g11 - g1^2) x x', (g12 - g1 g2) x], [., g22 - g2^2]] dG(x)
        with g11, g12, g22 at 2*alpha and g1, g2 at alpha

and ``Sigma = J^-1 K J^-1``.  With ``G`` the empirical measure of a sample
we get the plug-in versions used for standard errors and Wald tests.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dpd import integrals
from .errors import DomainError, NonConvergence, NotPositiveDefinite, Singular
from .numerics import check_condition, gauss_hermite

__all__ = [
    "CovariateKind",
    "CovariateDistribution",
    "SandwichMatrices",
    "sandwich_empirical",
    "sandwich_analytic",
    "sandwich_from_nodes",
    "j_matrix",
    "sandwich_solve",
    "are",
]

UNIVARIATE_NODES = 61
PRODUCT_NODES = {1: 61, 2: 31, 3: 15}
MC_DRAWS = 20_000
MC_SEED = 20170101
NODE_FLOOR = 1e-20


class CovariateKind(enum.Enum):
    UNIVARIATE_NORMAL = "univariate_normal"
    PRODUCT_NORMAL = "product_normal"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class CovariateDistribution:
    """Distribution ``G`` of the covariate vector.

    ``intercept=True`` prepends a constant 1 coordinate to every draw, so a
    univariate normal with an intercept gives ``x = (1, X)``.
    """

    kind: CovariateKind
    mu: np.ndarray = field(default_factory=lambda: np.zeros(1))
    sd: np.ndarray = field(default_factory=lambda: np.ones(1))
    points: np.ndarray | None = None
    intercept: bool = False

    def __post_init__(self):
        if self.kind is CovariateKind.EMPIRICAL:
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim == 1:
                pts = pts.reshape(-1, 1)
            if pts.size == 0:
                raise DomainError("empirical covariate distribution needs at least one point")
            object.__setattr__(self, "points", pts)
        else:
            mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
            sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
            if mu.shape != sd.shape:
                raise DomainError("mu and sd must have the same length")
            if np.any(sd <= 0):
                raise DomainError("covariate standard deviations must be positive")
            if self.kind is CovariateKind.UNIVARIATE_NORMAL and mu.size != 1:
                raise DomainError("univariate normal takes a scalar mean")
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "sd", sd)

    @classmethod
    def univariate_normal(cls, mu=0.0, sd=1.0, intercept=False):
        return cls(CovariateKind.UNIVARIATE_NORMAL, np.array([mu]), np.array([sd]),
                   intercept=intercept)

    @classmethod
    def product_normal(cls, mu, sd, intercept=False):
        return cls(CovariateKind.PRODUCT_NORMAL, np.asarray(mu), np.asarray(sd),
                   intercept=intercept)

    @classmethod
    def empirical(cls, X):
        return cls(CovariateKind.EMPIRICAL, points=np.asarray(X, dtype=float))

    @property
    def dim(self):
        """Length of the covariate vector ``x`` fed to the model."""
        if self.kind is CovariateKind.EMPIRICAL:
            return self.points.shape[1]
        return self.mu.size + int(self.intercept)

    def _with_intercept(self, Z):
        if self.intercept:
            return np.hstack([np.ones((Z.shape[0], 1)), Z])
        return Z

    def nodes(self, n_nodes=None):
        """Integration nodes ``(X, w)`` with ``sum(w) = 1``."""
        if self.kind is CovariateKind.EMPIRICAL:
            n = self.points.shape[0]
            return self.points, np.full(n, 1.0 / n)
        d = self.mu.size
        if d > 3:
            rng = np.random.Generator(np.random.Philox(MC_SEED))
            Z = self.mu + self.sd * rng.standard_normal((MC_DRAWS, d))
            return self._with_intercept(Z), np.full(MC_DRAWS, 1.0 / MC_DRAWS)
        if n_nodes is None:
            n_nodes = UNIVARIATE_NODES if d == 1 else PRODUCT_NODES[d]
        rule = gauss_hermite(n_nodes)
        t = np.sqrt(2.0) * rule.nodes
        w = rule.weights / np.sqrt(np.pi)
        grid = np.array(list(itertools.product(t, repeat=d)))
        weights = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
        Z = self.mu + self.sd * grid
        return self._with_intercept(Z), weights

    def draw(self, rng, n):
        """Draw ``n`` covariate vectors."""
        if self.kind is CovariateKind.EMPIRICAL:
            idx = rng.integers(0, self.points.shape[0], size=n)
            return self.points[idx]
        Z = self.mu + self.sd * rng.standard_normal((n, self.mu.size))
        return self._with_intercept(Z)


@dataclass(frozen=True)
class SandwichMatrices:
    J: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray


def _block(X, w, a, b=None, c=None):
    """``sum_i w_i [[a_i x x', b_i x], [b_i x', c_i]]``."""
    top = (X * (w * a)[:, None]).T @ X
    if b is None:
        return top
    side = X.T @ (w * b)
    corner = np.sum(w * c)
    return np.block([[top, side[:, None]], [side[None, :], np.array([[corner]])]])


def j_matrix(X, w, g):
    """``J`` from a :class:`~mdpdglm.dpd.GammaSet` evaluated at the rows of ``X``."""
    return _block(X, w, g.gamma11, g.gamma12, g.gamma22)


def k_matrix(X, w, g, g2):
    """``K`` from integrals at alpha (``g``) and at 2 * alpha (``g2``)."""
    if g.gamma2 is None:
        return _block(X, w, g2.gamma11 - g.gamma1**2)
    return _block(X, w, g2.gamma11 - g.gamma1**2, g2.gamma12 - g.gamma1 * g.gamma2,
                  g2.gamma22 - g.gamma2**2)


def sandwich_solve(J, K):
    """``J^-1 K J^-1`` through a Cholesky factor of ``J``."""
    check_condition(J)
    try:
        factor = linalg.cho_factor(J, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefinite("J is not positive definite") from None
    left = linalg.cho_solve(factor, K)
    sigma = linalg.cho_solve(factor, left.T)
    return 0.5 * (sigma + sigma.T)


def sandwich_from_nodes(model, X, w, eta, alpha):
    """Sandwich matrices for the discrete covariate measure ``sum_i w_i delta_{x_i}``."""
    alpha = float(alpha)
    X = np.asarray(X, dtype=float)
    beta, phi = model.split(eta)
    if X.shape[1] != np.asarray(beta).size:
        raise DomainError(f"covariates have dimension {X.shape[1]}, beta has {np.asarray(beta).size}")
    gs = integrals(model, X @ beta, phi, (alpha, 2.0 * alpha))
    g, g2 = gs[alpha], gs[2.0 * alpha]
    J = j_matrix(X, w, g)
    K = k_matrix(X, w, g, g2)
    J = 0.5 * (J + J.T)
    K = 0.5 * (K + K.T)
    return SandwichMatrices(J, K, sandwich_solve(J, K))


def sandwich_empirical(model, sample, eta, alpha):
    """Plug-in sandwich with ``G`` replaced by the empirical covariate measure."""
    X = sample.X
    n = X.shape[0]
    return sandwich_from_nodes(model, X, np.full(n, 1.0 / n), eta, alpha)


def _prune(X, w, beta):
    """Drop nodes whose weight times the largest integrand growth is below NODE_FLOOR.

    The integrands are at most ``max(1, exp(x'beta)) * |x|^2`` up to factors of
    order one, so the dropped mass is negligible against J and K.
    """
    growth = np.maximum(X @ beta, 0.0) + 2.0 * np.log1p(np.linalg.norm(X, axis=1))
    keep = np.log(w) + growth > np.log(NODE_FLOOR)
    return X[keep], w[keep]


def sandwich_analytic(model, covariate_dist, eta, alpha, n_nodes=None):
    """Population sandwich integrating over ``covariate_dist``."""
    beta = np.atleast_1d(np.asarray(model.split(eta)[0], dtype=float))
    if covariate_dist.dim != beta.size:
        raise DomainError(f"covariates have dimension {covariate_dist.dim}, beta has {beta.size}")
    X, w = covariate_dist.nodes(n_nodes)
    if covariate_dist.kind is not CovariateKind.EMPIRICAL:
        X, w = _prune(X, w, beta)
    out = sandwich_from_nodes(model, X, w, eta, alpha)
    if not (np.all(np.isfinite(out.J)) and np.all(np.isfinite(out.K))):
        raise NonConvergence("covariate quadrature produced non-finite matrices")
    return out


def are(model, covariate_dist, beta0, alpha):
    """Asymptotic relative efficiency ``Sigma_0 / Sigma_alpha`` for scalar beta."""
    if not model.dispersion_known:
        raise DomainError("ARE is defined here for known-dispersion models only")
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    if beta0.size != 1 or covariate_dist.dim != 1:
        raise DomainError("ARE needs a scalar beta (k = 1)")
    s0 = sandwich_analytic(model, covariate_dist, beta0, 0.0).Sigma[0, 0]
    sa = sandwich_analytic(model, covariate_dist, beta0, alpha).Sigma[0, 0]
    if sa <= 0:
        raise Singular("nonpositive asymptotic variance")
    return float(s0 / sa)
