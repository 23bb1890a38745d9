"""Minimum density power divergence estimation.

The solver runs damped Newton steps on ``mean(psi_alpha) = 0`` using the
empirical ``J_alpha`` as the Jacobian.  Steps are backtracked against the
divergence objective (the mean negative log-likelihood at ``alpha = 0``);
when backtracking stalls the solver falls back to gradient descent with an
Armijo line search.  Every ``alpha > 0`` fit starts from the MLE, so when the
objective is multimodal the returned root is the one reached from there.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .asymp import j_matrix, sandwich_empirical
from .dpd import integrals, psi_from_gammas
from .errors import DomainError, NonConvergence, RankDeficient, SeparationError
from .model import Eta, Family

__all__ = ["FitOptions", "MdpdeFit", "fit_mdpde", "fit_path"]

log = logging.getLogger(__name__)

_LP_LIMIT = 700.0


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 200
    max_backtrack: int = 40
    compute_sigma: bool = True


@dataclass(frozen=True)
class MdpdeFit:
    """Result of :func:`fit_mdpde`.

    ``sigma_hat`` is the plug-in ``Sigma_alpha(eta_hat)`` (covariance of
    ``sqrt(n) (eta_hat - eta)``), so standard errors are
    ``sqrt(diag(sigma_hat) / n)``.
    """

    model: object
    eta_hat: np.ndarray
    alpha: float
    gradient_norm: float
    iterations: int
    converged: bool
    n: int
    sigma_hat: np.ndarray | None = None
    message: str = ""
    history: tuple = field(default=(), repr=False)

    @property
    def eta(self):
        return Eta.from_vector(self.model, self.eta_hat)

    @property
    def beta(self):
        return self.model.split(self.eta_hat)[0]

    @property
    def phi(self):
        return self.model.split(self.eta_hat)[1]

    @property
    def std_errors(self):
        if self.sigma_hat is None:
            return None
        return np.sqrt(np.diag(self.sigma_hat) / self.n)


def _check_design(model, sample):
    n, k = sample.X.shape
    p = model.n_params(k)
    if n < k + 1:
        raise RankDeficient(f"need at least k + 1 = {k + 1} observations, got {n}")
    if np.linalg.matrix_rank(sample.X) < k:
        raise RankDeficient("design matrix is not of full column rank")
    if not model.dispersion_known and n < p:
        raise RankDeficient("too few observations for beta and phi")


def _poisson_mle_exists(sample):
    """Check for a direction along which the Poisson likelihood keeps rising.

    Such a ``v`` has ``x_i'v = 0`` where ``y_i > 0`` and ``x_i'v <= 0``
    elsewhere with at least one strict inequality.
    """
    X, y = sample.X, sample.y
    pos, zero = X[y > 0], X[y == 0]
    k = X.shape[1]
    if zero.shape[0] == 0 or (pos.shape[0] and np.linalg.matrix_rank(pos) == k):
        return True
    res = optimize.linprog(
        c=zero.sum(axis=0),
        A_ub=zero, b_ub=np.zeros(zero.shape[0]),
        A_eq=pos if pos.shape[0] else None, b_eq=np.zeros(pos.shape[0]) if pos.shape[0] else None,
        bounds=[(-1.0, 1.0)] * k, method="highs",
    )
    return not (res.status == 0 and -res.fun > 1e-9)


class _Problem:
    """Merit, residual and Jacobian for one sample at one alpha, from one pass."""

    def __init__(self, model, sample, alpha):
        self.model = model
        self.sample = sample
        self.alpha = float(alpha)
        n = sample.n
        self.w = np.full(n, 1.0 / n)

    def evaluate(self, eta):
        """Return ``(merit, mean_psi, J)``; merit is ``inf`` outside the domain."""
        model, s, a = self.model, self.sample, self.alpha
        beta, phi = model.split(eta)
        if not model.dispersion_known and not phi > 0:
            return np.inf, None, None
        lp = s.X @ beta
        if not np.max(np.abs(lp)) <= _LP_LIMIT:
            return np.inf, None, None
        g = integrals(model, lp, phi, (a,))[a]
        logf = model.log_density(s.y, lp, phi)
        psi = psi_from_gammas(model, s.y, s.X, lp, phi, g, a)
        if a == 0:
            merit = float(-np.mean(logf))
        else:
            merit = float(np.mean(g.gamma0 - (1.0 + 1.0 / a) * np.exp(a * logf)))
        J = j_matrix(s.X, self.w, g)
        return merit, psi.mean(axis=0), 0.5 * (J + J.T)

    def gradient_scale(self):
        # gradient of the merit is this multiple of the mean residual
        return 1.0 + self.alpha


def _newton_direction(F, J):
    try:
        factor = linalg.cho_factor(J, lower=True)
        return -linalg.cho_solve(factor, F)
    except (linalg.LinAlgError, ValueError):
        return None


def _solve(problem, eta0, options):
    eta = np.array(eta0, dtype=float)
    merit, F, J = problem.evaluate(eta)
    if F is None:
        raise DomainError("starting point outside the parameter space")
    norm = float(np.max(np.abs(F)))
    history = [norm]
    it = 0
    message = "maximum iterations reached"
    while it < options.max_iter:
        if norm < options.tol:
            break
        it += 1
        step = _newton_direction(F, J)
        accepted = False
        if step is not None and np.all(np.isfinite(step)):
            t = 1.0
            for _ in range(options.max_backtrack):
                trial = eta + t * step
                m_t, F_t, J_t = problem.evaluate(trial)
                if np.isfinite(m_t):
                    n_t = float(np.max(np.abs(F_t)))
                    if m_t < merit or n_t < norm:
                        accepted = True
                        break
                t *= 0.5
        if not accepted:
            # gradient descent on the merit with an Armijo rule
            grad = problem.gradient_scale() * F
            g2 = float(grad @ grad)
            t = 1.0 / max(1.0, np.max(np.abs(np.diag(J))))
            for _ in range(2 * options.max_backtrack):
                trial = eta - t * grad
                m_t, F_t, J_t = problem.evaluate(trial)
                if np.isfinite(m_t) and m_t <= merit - 1e-4 * t * g2:
                    n_t = float(np.max(np.abs(F_t)))
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            message = "line search failed"
            break
        move = float(np.max(np.abs(trial - eta)))
        eta, F, J, merit, norm = trial, F_t, J_t, m_t, n_t
        history.append(norm)
        if move < options.step_tol and norm >= options.tol:
            message = "step below tolerance before residual"
            break
    converged = norm < options.tol
    if converged:
        message = "residual below tolerance"
    return eta, norm, it, converged, message, tuple(history)


def _mle_start(model, sample):
    k = sample.k
    if model.dispersion_known:
        return np.zeros(k)
    sd = float(np.std(sample.y, ddof=1)) if sample.n > 1 else 1.0
    return model.join(np.zeros(k), max(sd, 1e-3))


def _finish(model, sample, alpha, eta, norm, it, converged, message, history, options):
    sigma = None
    if options.compute_sigma and converged:
        sigma = sandwich_empirical(model, sample, eta, alpha).Sigma
    return MdpdeFit(model, eta, float(alpha), norm, it, converged, sample.n, sigma, message, history)


def _fit_from(model, sample, alpha, start, options):
    problem = _Problem(model, sample, alpha)
    eta, norm, it, conv, msg, hist = _solve(problem, start, options)
    return _finish(model, sample, alpha, eta, norm, it, conv, msg, hist, options)


def fit_mdpde(model, sample, alpha, options=None, start=None):
    """Fit the MDPDE at tuning parameter ``alpha``.

    Parameters
    ----------
    model : GlmModel
    sample : Sample
    alpha : float
        DPD tuning parameter, ``alpha >= 0``; ``alpha = 0`` gives the MLE.
    options : FitOptions, optional
    start : array_like, optional
        Starting parameter vector.  By default the MLE is computed first
        (from ``beta = 0`` and ``phi = sd(y)``) and used as the start.

    Raises
    ------
    RankDeficient
        Fewer than ``k + 1`` rows or a rank-deficient design.
    SeparationError
        The Poisson likelihood has no maximizer for this design.
    NonConvergence
        The residual did not fall below ``options.tol``.
    """
    alpha = float(alpha)
    if not alpha >= 0:
        raise DomainError("alpha must be nonnegative")
    options = options or FitOptions()
    _check_design(model, sample)
    model.check_support(sample.y)
    if model.family is Family.POISSON and not _poisson_mle_exists(sample):
        raise SeparationError("Poisson likelihood is unbounded along a direction of the design")
    if start is None:
        start = _mle_start(model, sample)
        if alpha > 0:
            mle = _fit_from(model, sample, 0.0, start, replace(options, compute_sigma=False))
            if not mle.converged:
                raise NonConvergence(f"MLE start failed: {mle.message}")
            start = mle.eta_hat
    fit = _fit_from(model, sample, alpha, start, options)
    if not fit.converged:
        raise NonConvergence(
            f"alpha={alpha:g}: {fit.message} after {fit.iterations} iterations "
            f"(residual {fit.gradient_norm:.3g})")
    return fit


def fit_path(model, sample, alphas, options=None):
    """Warm-started fits over an ascending grid of ``alpha`` values.

    A failure at one ``alpha`` is recorded as an unconverged fit (or the
    exception, for errors that leave no estimate) and the path continues from
    the last good solution.
    """
    alphas = [float(a) for a in alphas]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise DomainError("alphas must be sorted ascending")
    options = options or FitOptions()
    _check_design(model, sample)
    out = []
    start = None
    for a in alphas:
        try:
            if start is None:
                fit = fit_mdpde(model, sample, a, options)
            else:
                fit = _fit_from(model, sample, a, start, options)
        except NonConvergence as exc:
            log.warning("fit at alpha=%g failed: %s", a, exc)
            out.append(exc)
            continue
        out.append(fit)
        if fit.converged:
            start = fit.eta_hat
    return out
