"""Density power divergence kernels.

The integrals

    gamma_j(x)  = int K_j f^(1+alpha) dy
    gamma_jh(x) = int K_j K_h f^(1+alpha) dy

are summed over a truncated window for count responses and computed by
Gauss-Hermite quadrature centred on the conditional mean for real-valued
responses.  ``psi_alpha`` assembles the estimating function from them and
``dpd_objective`` is the empirical divergence whose stationary points solve
``mean(psi_alpha) = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NonConvergence
from .model import Support
from .numerics import gauss_hermite

__all__ = [
    "GammaSet",
    "gamma_set",
    "integrals",
    "psi_alpha",
    "psi_from_gammas",
    "mean_psi",
    "dpd_objective",
    "neg_loglik",
    "COUNT_SPREAD",
    "TAIL_RTOL",
    "HERMITE_NODES",
]

COUNT_SPREAD = 12.0
COUNT_MIN_UPPER = 50
TAIL_RTOL = 1e-14
HERMITE_NODES = 201
# cap on y-window cells evaluated at once
_CHUNK_CELLS = 2_000_000
_LOG_FACTORIAL_CAP = 1 << 20


@dataclass(frozen=True)
class GammaSet:
    """Integrals at one ``alpha`` for one or more linear predictors.

    ``gamma0`` is ``int f^(1+alpha) dy`` (used by the objective).  The
    dispersion entries are ``None`` when phi is known.
    """

    alpha: float
    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma11: np.ndarray
    gamma2: np.ndarray | None = None
    gamma12: np.ndarray | None = None
    gamma22: np.ndarray | None = None

    def take(self, index):
        """Subset every array with the same fancy index."""
        def sub(v):
            return None if v is None else v[index]

        return GammaSet(self.alpha, sub(self.gamma0), sub(self.gamma1), sub(self.gamma11),
                        sub(self.gamma2), sub(self.gamma12), sub(self.gamma22))


class _LogFactorial:
    """Growing lookup table of ``log(y!)``."""

    def __init__(self):
        self.table = gammaln(np.arange(1024, dtype=float) + 1.0)

    def __call__(self, y):
        top = int(y.max()) + 1
        if top > _LOG_FACTORIAL_CAP:
            return gammaln(y + 1.0)
        if top > self.table.shape[0]:
            size = max(top, 2 * self.table.shape[0])
            self.table = gammaln(np.arange(size, dtype=float) + 1.0)
        return self.table[y]


_log_factorial = _LogFactorial()


def _alpha_power(logf, alpha):
    if alpha == 0:
        return np.ones_like(logf)
    return np.exp(alpha * logf)


def _count_window(mu, spread):
    s = np.sqrt(mu)
    lo = np.floor(np.maximum(mu - spread * s - 10.0, 0.0)).astype(np.int64)
    hi = np.maximum(np.ceil(mu + spread * s), COUNT_MIN_UPPER).astype(np.int64)
    return lo, hi


def _poisson_block(lp, alphas, spread):
    """Window sums for a block of linear predictors; returns (results, ok-mask)."""
    mu = np.exp(lp)
    lo, hi = _count_window(mu, spread)
    span = hi - lo
    width = int(span.max()) + 1
    y = lo[:, None] + np.arange(width)[None, :]
    inside = (y <= hi[:, None]).astype(float)
    y = np.minimum(y, hi[:, None])
    logf = y * lp[:, None] - mu[:, None] - _log_factorial(y)
    resid = y - mu[:, None]
    rows = np.arange(lp.shape[0])
    edge_r = resid[rows, span]
    edge_l = resid[:, 0]
    out = {}
    ok = np.ones(lp.shape[0], dtype=bool)
    for a in alphas:
        t = np.exp((1.0 + a) * logf) * inside
        rt = resid * t
        g0 = t.sum(axis=1)
        g1 = rt.sum(axis=1)
        g11 = (resid * rt).sum(axis=1)
        # edge terms of t * (1 + resid^2) against its total g0 + g11
        right = t[rows, span] * (1.0 + edge_r**2)
        left = np.where(lo > 0, t[:, 0] * (1.0 + edge_l**2), 0.0)
        ok &= np.maximum(right, left) <= TAIL_RTOL * (g0 + g11)
        out[a] = (g0, g1, g11)
    return out, ok


def _poisson_integrals(lp, alphas):
    n = lp.shape[0]
    res = {a: [np.empty(n), np.empty(n), np.empty(n)] for a in alphas}
    mu = np.exp(lp)
    if not np.all(np.isfinite(mu)):
        raise DomainError("linear predictor too large for the Poisson mean")
    lo, hi = _count_window(mu, COUNT_SPREAD)
    order = np.argsort(hi - lo, kind="stable")
    rows = max(1, _CHUNK_CELLS // int((hi - lo).max() + 1))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        idx = order[start:stop]
        pending = idx
        for spread in (COUNT_SPREAD, 2 * COUNT_SPREAD, 4 * COUNT_SPREAD):
            block, ok = _poisson_block(lp[pending], alphas, spread)
            good = pending[ok]
            for a in alphas:
                for j in range(3):
                    res[a][j][good] = block[a][j][ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
        else:
            raise NonConvergence(
                f"count truncation failed to reach relative tail {TAIL_RTOL:g} "
                f"for linear predictor {lp[pending[0]]:.6g}")
    return res


def _hermite_integrals(model, lp, phi, alphas, n_nodes=HERMITE_NODES):
    rule = gauss_hermite(n_nodes)
    t, w = rule.nodes, rule.weights
    mean = model.mean(lp)
    out = {}
    for a in alphas:
        scale = phi / np.sqrt(1.0 + a)
        y = mean[:, None] + np.sqrt(2.0) * scale * t[None, :]
        logf = model.log_density(y, lp[:, None], phi)
        # weight * f^(1+a) * exp(t^2), kept in log space
        kernel = np.sqrt(2.0) * scale * w[None, :] * np.exp((1.0 + a) * logf + t[None, :] ** 2)
        k1, k2 = model.score_components(y, lp[:, None], phi)
        g0 = kernel.sum(axis=1)
        g1 = (k1 * kernel).sum(axis=1)
        g11 = (k1 * k1 * kernel).sum(axis=1)
        if k2 is None:
            out[a] = (g0, g1, g11)
        else:
            out[a] = (g0, g1, g11, (k2 * kernel).sum(axis=1),
                      (k1 * k2 * kernel).sum(axis=1), (k2 * k2 * kernel).sum(axis=1))
    return out


def _closed_form_alpha0(model, lp, phi):
    # at alpha = 0 the integrals are moments of the score: zero mean, Fisher information
    one, zero = np.ones_like(lp), np.zeros_like(lp)
    if model.support is Support.COUNTS:
        mu = np.exp(lp)
        if not np.all(np.isfinite(mu)):
            raise DomainError("linear predictor too large for the Poisson mean")
        return (one, zero, mu)
    return (one, zero, one / phi**2, zero, zero, 2.0 * one / phi**2)


def integrals(model, lp, phi, alphas):
    """Gamma integrals for every linear predictor in ``lp`` at each ``alpha``.

    Returns a dict ``alpha -> GammaSet`` with arrays shaped like ``lp``.
    Repeated linear predictors are evaluated once.
    """
    alphas = tuple(dict.fromkeys(float(a) for a in alphas))
    if any(a < 0 for a in alphas):
        raise DomainError("alpha must be nonnegative")
    lp = np.asarray(lp, dtype=float)
    shape = lp.shape
    uniq, inverse = np.unique(lp.reshape(-1), return_inverse=True)
    if model.support is Support.REAL_LINE:
        phi = model._phi(phi)
    raw = {}
    rest = tuple(a for a in alphas if a > 0)
    if len(rest) < len(alphas):
        raw[0.0] = _closed_form_alpha0(model, uniq, phi)
    if rest:
        if model.support is Support.COUNTS:
            raw.update(_poisson_integrals(uniq, rest))
        else:
            raw.update(_hermite_integrals(model, uniq, phi, rest))
    result = {}
    for a in alphas:
        parts = [np.asarray(v)[inverse].reshape(shape) for v in raw[a]]
        result[a] = GammaSet(a, *parts)
    return result


def gamma_set(model, x, eta, alpha):
    """Gamma integrals at covariate ``x`` (a vector, or rows of a matrix)."""
    beta, phi = model.split(eta)
    lp = np.asarray(x, dtype=float) @ np.asarray(beta, dtype=float)
    return integrals(model, lp, phi, (alpha,))[float(alpha)]


def psi_from_gammas(model, y, X, lp, phi, gammas, alpha):
    """Assemble psi rows from precomputed integrals (shapes broadcast over rows)."""
    k1, k2 = model.score_components(y, lp, phi)
    fa = _alpha_power(model.log_density(y, lp, phi), alpha)
    first = (gammas.gamma1 - k1 * fa)[..., None] * X
    if k2 is None:
        return first
    second = gammas.gamma2 - k2 * fa
    return np.concatenate([first, second[..., None]], axis=-1)


def psi_alpha(model, y, x, eta, alpha):
    """Estimating function ``psi_alpha(y, x; eta)``.

    ``y`` scalar with ``x`` a vector gives one row of length p (``k`` or
    ``k + 1``); ``y`` of shape (n,) with ``x`` of shape (n, k) gives (n, p).
    """
    alpha = float(alpha)
    beta, phi = model.split(eta)
    y = np.asarray(y, dtype=float)
    X = np.asarray(x, dtype=float)
    single = y.ndim == 0
    y = np.atleast_1d(y)
    X = X.reshape(y.shape[0], -1) if X.ndim < 2 else X
    lp = X @ beta
    g = integrals(model, lp, phi, (alpha,))[alpha]
    out = psi_from_gammas(model, y, X, lp, phi, g, alpha)
    return out[0] if single else out


def mean_psi(model, sample, eta, alpha):
    """``(1/n) sum_i psi_alpha(y_i, x_i; eta)``."""
    return psi_alpha(model, sample.y, sample.X, eta, alpha).mean(axis=0)


def dpd_objective(model, sample, eta, alpha):
    """Empirical density power divergence, terms free of eta dropped.

        (1/n) sum_i [ int f^(1+alpha)(y, x_i) dy - (1 + 1/alpha) f^alpha(y_i, x_i) ]

    Its gradient in eta equals ``(1 + alpha) * mean_psi``.
    """
    alpha = float(alpha)
    if alpha <= 0:
        raise DomainError("the divergence objective needs alpha > 0; use neg_loglik at alpha = 0")
    beta, phi = model.split(eta)
    lp = sample.X @ beta
    g = integrals(model, lp, phi, (alpha,))[alpha]
    fa = np.exp(alpha * model.log_density(sample.y, lp, phi))
    return float(np.mean(g.gamma0 - (1.0 + 1.0 / alpha) * fa))


def neg_loglik(model, sample, eta):
    """Mean negative log-likelihood, the alpha -> 0 counterpart of the objective."""
    beta, phi = model.split(eta)
    return float(-np.mean(model.log_density(sample.y, sample.X @ beta, phi)))
