"""Shared fixtures and independent oracles.

The oracles deliberately avoid the package's own kernels: Poisson sums go
through ``scipy.stats.poisson`` over a fixed range, normal integrals through
adaptive ``scipy.integrate.quad`` and the MLE through textbook IRLS.
"""
import math

import numpy as np
import pytest
from scipy import integrate, stats

from mdpdglm.asymp import CovariateDistribution
from mdpdglm.model import NormalLinearRegression, PoissonRegression, Sample


@pytest.fixture
def poisson():
    return PoissonRegression()


@pytest.fixture
def normal():
    return NormalLinearRegression()


@pytest.fixture
def std_normal_cov():
    return CovariateDistribution.univariate_normal(0.0, 1.0)


def brute_poisson_gammas(lp, alpha, y_max=500):
    """``(gamma1, gamma11)`` by direct summation over ``y = 0..y_max``."""
    mu = np.exp(lp)
    y = np.arange(y_max + 1)
    f = stats.poisson.pmf(y, mu)
    t = f ** (1.0 + alpha)
    r = y - mu
    return float(np.sum(r * t)), float(np.sum(r * r * t))


def quad_normal_gammas(lp, phi, alpha):
    """All six normal-family integrals by adaptive quadrature."""
    def dens(y):
        return stats.norm.pdf(y, lp, phi)

    def k1(y):
        return (y - lp) / phi**2

    def k2(y):
        return (y - lp) ** 2 / phi**3 - 1.0 / phi

    def q(fn):
        return integrate.quad(lambda y: fn(y) * dens(y) ** (1.0 + alpha),
                              lp - 40 * phi, lp + 40 * phi, epsabs=1e-14, epsrel=1e-12, limit=400)[0]

    return {
        "gamma1": q(k1), "gamma11": q(lambda y: k1(y) ** 2), "gamma2": q(k2),
        "gamma12": q(lambda y: k1(y) * k2(y)), "gamma22": q(lambda y: k2(y) ** 2),
    }


def irls_poisson(X, y, tol=1e-13, max_iter=100):
    """Poisson log-link MLE by iteratively reweighted least squares."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        mu = np.exp(eta)
        z = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        new = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]
        if np.max(np.abs(new - beta)) < tol:
            return new
        beta = new
    return beta


def poisson_sample(seed, n=200, beta=(1.0,), intercept=False):
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    k = beta.size - int(intercept)
    Z = rng.standard_normal((n, k))
    X = np.hstack([np.ones((n, 1)), Z]) if intercept else Z
    y = rng.poisson(np.exp(X @ beta)).astype(float)
    return Sample(y, X)


def normal_sample(seed, n=200, beta=(0.5, 1.0), phi=1.5):
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, beta.size - 1))])
    y = X @ beta + phi * rng.standard_normal(n)
    return Sample(y, X)


def oracle_if(beta, alpha, y_t, x_t):
    """IF for Poisson k=1, x ~ N(0,1), from brute-force sums and numpy Gauss-Hermite."""
    t, w = np.polynomial.hermite.hermgauss(80)
    x = np.sqrt(2) * t
    w = w / np.sqrt(np.pi)
    J = 0.0
    for xi, wi in zip(x, w):
        mu = math.exp(xi * beta)
        J += wi * brute_poisson_gammas(xi * beta, alpha, int(mu + 40 * math.sqrt(mu) + 60))[1] * xi**2
    g1, _ = brute_poisson_gammas(x_t * beta, alpha)
    f = stats.poisson.pmf(y_t, math.exp(x_t * beta))
    score = ((y_t - math.exp(x_t * beta)) * f**alpha - g1) * x_t
    return score / J
