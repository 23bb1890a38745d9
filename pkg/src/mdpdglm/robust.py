"""Influence-function diagnostics for the MDPDE and its Wald-type tests.

The estimator IF at a contamination point ``(y_t, x_t)`` is
``-J_alpha^-1 psi_alpha(y_t, x_t)``; ``psi`` carries the sign of the
negative score, so this is ``J^-1 x_t (y_t - mu_t)`` for the Poisson MLE.
The test statistic has a zero first order IF; its second order IF is the
quadratic form ``IF' M [M' Sigma M]^-1 M' IF``.  Under contiguous alternatives the power
influence function is ``K*_r(s) P IF`` with ``P = d' M [M' Sigma M]^-1 M'``
and ``s = P d``, and the level influence function vanishes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .asymp import sandwich_analytic
from .dpd import integrals, psi_alpha, psi_from_gammas
from .errors import DomainError, NotPositiveDefinite
from .numerics import chisq_sf, chisq_upper_point, solve_spd
from .wald import _check_null, _direction, _middle, poisson_weights

__all__ = [
    "ContaminationPoint",
    "IfKind",
    "IfGrid",
    "if_estimator",
    "if_test",
    "if2_test",
    "k_star",
    "pif_test",
    "lif",
    "if_grid_scan",
    "figure_grid",
    "panel_grid",
]


@dataclass(frozen=True)
class ContaminationPoint:
    """Point mass ``(y_t, x_t)``."""

    y_t: float
    x_t: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x_t, dtype=float))
        if not (np.isfinite(self.y_t) and np.all(np.isfinite(x))):
            raise DomainError("contamination point must be finite")
        object.__setattr__(self, "y_t", float(self.y_t))
        object.__setattr__(self, "x_t", x)


class IfKind(enum.Enum):
    ESTIMATOR = "estimator"
    SECOND_ORDER_TEST = "if2"
    POWER = "power"


@dataclass(frozen=True)
class IfGrid:
    """Values on a ``(y, x)`` grid; ``values[i, j]`` is at ``(y_grid[i], x_grid[j])``."""

    y_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    sup_abs: float

    def long_format(self):
        """Rows ``(y, x, value)`` with y varying slowest."""
        Y, X = np.meshgrid(self.y_grid, self.x_grid, indexing="ij")
        return np.column_stack([Y.ravel(), X.ravel(), self.values.ravel()])


def _as_point(point):
    if isinstance(point, ContaminationPoint):
        return point
    y, x = point
    return ContaminationPoint(y, x)


def _j_inverse_times(J, v):
    try:
        return solve_spd(J, v)
    except NotPositiveDefinite:
        return linalg.solve(J, v)


def if_estimator(model, covariate_dist, eta, alpha, point, matrices=None):
    """Influence function ``-J^-1 psi`` of the MDPDE functional at ``point``.

    ``matrices`` may carry a precomputed :class:`~mdpdglm.asymp.SandwichMatrices`
    for ``(covariate_dist, eta, alpha)``.
    """
    point = _as_point(point)
    if matrices is None:
        matrices = sandwich_analytic(model, covariate_dist, eta, alpha)
    psi = psi_alpha(model, point.y_t, point.x_t, eta, alpha)
    return -_j_inverse_times(matrices.J, psi)


def if_test(model, covariate_dist, eta0, hypothesis, alpha, point):
    """First order IF of the Wald-type statistic at the null, identically zero."""
    return 0.0


def if2_test(model, covariate_dist, eta0, hypothesis, alpha, point, matrices=None):
    """Second order IF ``IF' M [M' Sigma M]^-1 M' IF`` of the statistic at the null."""
    eta0 = np.asarray(eta0, dtype=float)
    _check_null(model, hypothesis, eta0)
    if matrices is None:
        matrices = sandwich_analytic(model, covariate_dist, eta0, alpha)
    inf = if_estimator(model, covariate_dist, eta0, alpha, point, matrices)
    M = hypothesis.jacobian(model)
    t = M.T @ inf
    return max(float(t @ solve_spd(_middle(M, matrices.Sigma), t)), 0.0)


def k_star(r, s, level):
    """``K*_r(s)``, the derivative factor of the contiguous power.

    Uses ``K*_r(s) = sum_v w_v(s) [P(chi2_{r+2v+2} > c) - P(chi2_{r+2v} > c)]``
    with ``w_v(s)`` the Poisson(s/2) weights, which equals the series with
    ``s^(v-1) (2v - s)`` terms and has the finite limit
    ``P(chi2_{r+2} > c) - P(chi2_r > c)`` at ``s = 0``.
    """
    c = chisq_upper_point(r, level)
    v, w = poisson_weights(s)
    return float(np.sum(w * (chisq_sf(r + 2 * v + 2, c) - chisq_sf(r + 2 * v, c))))


def _projection(model, hypothesis, sigma, d, p):
    M = hypothesis.jacobian(model)
    d = _direction(model, hypothesis, d, p)
    mid = _middle(M, sigma)
    P = M @ solve_spd(mid, M.T @ d)
    return P, float(P @ d)


def pif_test(model, covariate_dist, eta0, hypothesis, d, alpha, point, level=0.05, matrices=None):
    """Power influence function ``K*_r(P d) P IF`` at the null."""
    eta0 = np.asarray(eta0, dtype=float)
    _check_null(model, hypothesis, eta0)
    if matrices is None:
        matrices = sandwich_analytic(model, covariate_dist, eta0, alpha)
    P, s = _projection(model, hypothesis, matrices.Sigma, d, eta0.size)
    inf = if_estimator(model, covariate_dist, eta0, alpha, point, matrices)
    return k_star(hypothesis.r, s, level) * float(P @ inf)


def lif(model, covariate_dist, eta0, hypothesis, alpha, point, level=0.05):
    """Level influence function, identically zero at every order."""
    return 0.0


def _grid_psi(model, eta, alpha, y_grid, x_grid):
    """``psi`` at every ``(y, x)`` pair; returns shape (ny, nx, p)."""
    beta, phi = model.split(eta)
    beta = np.asarray(beta, dtype=float)
    if beta.size != 1:
        raise DomainError("grid scans take a scalar covariate (k = 1)")
    x = np.asarray(x_grid, dtype=float)
    y = np.asarray(y_grid, dtype=float)
    model.check_support(y)
    lp_x = x * beta[0]
    g = integrals(model, lp_x, phi, (alpha,))[float(alpha)]
    Y = y[:, None]
    LP = np.broadcast_to(lp_x[None, :], (y.size, x.size))
    X = np.broadcast_to(x[None, :, None], (y.size, x.size, 1))
    return psi_from_gammas(model, Y, X, LP, phi, g, alpha)


def if_grid_scan(model, covariate_dist, eta, alpha, which, y_grid, x_grid, hypothesis=None,
                 d=None, level=0.05, component=0):
    """Evaluate an influence function over a ``(y_t, x_t)`` grid (k = 1).

    ``which`` is ``"estimator"`` (coordinate ``component`` of the IF),
    ``"if2"`` (second order test IF; needs ``hypothesis``) or ``"power"``
    (PIF; needs ``hypothesis`` and ``d``).
    """
    which = IfKind(which)
    eta = np.asarray(eta, dtype=float)
    mats = sandwich_analytic(model, covariate_dist, eta, alpha)
    psi = _grid_psi(model, eta, alpha, y_grid, x_grid)
    shape = psi.shape
    inf = -_j_inverse_times(mats.J, psi.reshape(-1, shape[-1]).T).T.reshape(shape)
    if which is IfKind.ESTIMATOR:
        values = inf[..., component]
    else:
        if hypothesis is None:
            raise DomainError(f"{which.value} scan needs a hypothesis")
        _check_null(model, hypothesis, eta)
        M = hypothesis.jacobian(model)
        mid = _middle(M, mats.Sigma)
        if which is IfKind.SECOND_ORDER_TEST:
            t = inf @ M
            values = np.einsum("...i,...i->...", t, solve_spd(mid, t.reshape(-1, t.shape[-1]).T).T.reshape(t.shape))
            values = np.maximum(values, 0.0)
        else:
            if d is None:
                raise DomainError("power scan needs a direction d")
            P, s = _projection(model, hypothesis, mats.Sigma, d, eta.size)
            values = k_star(hypothesis.r, s, level) * (inf @ P)
    values = np.asarray(values, dtype=float)
    return IfGrid(np.asarray(y_grid, dtype=float), np.asarray(x_grid, dtype=float), values,
                  float(np.max(np.abs(values))))


def figure_grid(y_max=30, x_min=-3.0, x_max=3.0, x_step=0.05):
    """The default plotting grid: integer ``y`` in ``[0, y_max]`` and an ``x`` lattice."""
    y = np.arange(0, int(y_max) + 1, dtype=float)
    count = int(round((x_max - x_min) / x_step)) + 1
    x = np.round(x_min + x_step * np.arange(count), 10)
    return y, x


def panel_grid(mu_x=0.0, sd_x=1.0, beta=1.0, width=3.0, x_step=0.05, y_floor=30):
    """Grid for one panel with ``x ~ N(mu_x, sd_x^2)`` and slope ``beta``.

    ``x`` spans ``mu_x +/- width * sd_x``; ``y`` runs from 0 to the larger of
    ``y_floor`` and the Poisson mean at the far edge of that span, so the
    grid covers where the model puts its mass.  At ``mu_x = 0``, ``beta = 1``
    this is :func:`figure_grid` with its defaults.
    """
    lo, hi = mu_x - width * sd_x, mu_x + width * sd_x
    edge = max(abs(beta * lo), abs(beta * hi))
    y_max = max(int(y_floor), int(np.ceil(np.exp(edge))))
    return figure_grid(y_max, lo, hi, x_step)
