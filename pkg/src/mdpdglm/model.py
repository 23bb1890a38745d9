"""Exponential-family GLMs: Poisson regression and the normal linear model.

A model maps a linear predictor ``lp = x @ beta`` (and a dispersion ``phi``
when it is unknown) to a conditional density of ``y``.  All methods are
vectorized over ``y`` and ``lp`` with ordinary numpy broadcasting and
work in log space.

For the normal family we take ``a(phi) = phi**2`` so ``phi`` is the error
standard deviation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

__all__ = [
    "Family",
    "Support",
    "Link",
    "GlmModel",
    "PoissonRegression",
    "NormalLinearRegression",
    "get_model",
    "Eta",
    "Observation",
    "Sample",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
PHI_MIN = 1e-12


class Family(enum.Enum):
    POISSON = "poisson"
    NORMAL_LINEAR = "normal"


class Support(enum.Enum):
    COUNTS = "counts"
    REAL_LINE = "real"


class Link(enum.Enum):
    LOG = "log"
    IDENTITY = "identity"


class GlmModel:
    """Base class; concrete families override the exponential-family pieces.

    Subclasses define ``theta`` (canonical parameter as a function of the
    linear predictor), ``b`` and its derivatives, ``a`` and its derivative,
    ``c`` and the link ``g``.
    """

    family: Family
    support: Support
    link: Link
    dispersion_known: bool
    known_phi: float | None = None

    # -- parameter bookkeeping -------------------------------------------
    def n_params(self, k):
        return k if self.dispersion_known else k + 1

    def split(self, eta):
        """Return ``(beta, phi)`` from a parameter vector."""
        eta = np.asarray(eta, dtype=float)
        if self.dispersion_known:
            return eta, self.known_phi
        return eta[:-1], float(eta[-1])

    def join(self, beta, phi=None):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if self.dispersion_known:
            return beta.copy()
        if phi is None:
            raise DomainError("phi is required when the dispersion is unknown")
        return np.append(beta, float(phi))

    def _phi(self, phi):
        if self.dispersion_known:
            return self.known_phi
        if phi is None:
            raise DomainError("phi is required when the dispersion is unknown")
        if not np.all(np.asarray(phi) >= PHI_MIN):
            raise DomainError(f"phi must be at least {PHI_MIN}")
        return phi

    # -- exponential family pieces ---------------------------------------
    def theta(self, lp):
        raise NotImplementedError

    def b(self, theta):
        raise NotImplementedError

    def b1(self, theta):
        raise NotImplementedError

    def b2(self, theta):
        raise NotImplementedError

    def a(self, phi):
        raise NotImplementedError

    def a1(self, phi):
        raise NotImplementedError

    def c(self, y, phi):
        raise NotImplementedError

    def dc_dphi(self, y, phi):
        raise NotImplementedError

    def g(self, mu):
        raise NotImplementedError

    def g1(self, mu):
        raise NotImplementedError

    def check_support(self, y):
        raise NotImplementedError

    # -- derived quantities ----------------------------------------------
    def mean(self, lp):
        return self.b1(self.theta(lp))

    def variance(self, lp, phi=None):
        phi = self._phi(phi)
        return self.a(phi) * self.b2(self.theta(lp))

    def log_density(self, y, lp, phi=None):
        """``log f(y, lp, phi)``."""
        phi = self._phi(phi)
        self.check_support(y)
        th = self.theta(lp)
        return (y * th - self.b(th)) / self.a(phi) + self.c(y, phi)

    def score_components(self, y, lp, phi=None):
        """Return ``(K1, K2)``; ``K2`` is ``None`` when phi is known.

        ``K1 * x`` is the score for ``beta`` and ``K2`` the score for ``phi``.
        """
        phi = self._phi(phi)
        self.check_support(y)
        th = self.theta(lp)
        mu = self.b1(th)
        k1 = (y - mu) / (self.a(phi) * self.b2(th) * self.g1(mu))
        if self.dispersion_known:
            return k1, None
        a = self.a(phi)
        k2 = -(y * th - self.b(th)) / a**2 * self.a1(phi) + self.dc_dphi(y, phi)
        return k1, k2

    def draw(self, rng, lp, phi=None):
        """Draw responses from the conditional distribution."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class PoissonRegression(GlmModel):
    """Poisson counts with log link; ``phi = 1`` known."""

    family = Family.POISSON
    support = Support.COUNTS
    link = Link.LOG
    dispersion_known = True
    known_phi = 1.0

    def theta(self, lp):
        return np.asarray(lp, dtype=float)

    def b(self, theta):
        return np.exp(theta)

    b1 = b
    b2 = b

    def a(self, phi):
        return 1.0

    def a1(self, phi):
        return 0.0

    def c(self, y, phi):
        return -gammaln(np.asarray(y, dtype=float) + 1.0)

    def dc_dphi(self, y, phi):
        return 0.0

    def g(self, mu):
        return np.log(mu)

    def g1(self, mu):
        return 1.0 / mu

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.floor(y)) or not np.all(np.isfinite(y)):
            raise DomainError("Poisson responses must be nonnegative integers")

    def log_density(self, y, lp, phi=None):
        self.check_support(y)
        y = np.asarray(y, dtype=float)
        lp = np.asarray(lp, dtype=float)
        return y * lp - np.exp(lp) - gammaln(y + 1.0)

    def score_components(self, y, lp, phi=None):
        self.check_support(y)
        return np.asarray(y, dtype=float) - np.exp(lp), None

    def draw(self, rng, lp, phi=None):
        # numpy's Poisson sampler: inversion below mean 10, PTRS rejection above
        return rng.poisson(np.exp(lp)).astype(float)


class NormalLinearRegression(GlmModel):
    """Gaussian response, identity link, unknown standard deviation ``phi``."""

    family = Family.NORMAL_LINEAR
    support = Support.REAL_LINE
    link = Link.IDENTITY
    dispersion_known = False
    known_phi = None

    def theta(self, lp):
        return np.asarray(lp, dtype=float)

    def b(self, theta):
        return 0.5 * theta**2

    def b1(self, theta):
        return theta

    def b2(self, theta):
        return np.ones_like(theta)

    def a(self, phi):
        return phi**2

    def a1(self, phi):
        return 2.0 * phi

    def c(self, y, phi):
        return -0.5 * y**2 / phi**2 - 0.5 * _LOG_2PI - np.log(phi)

    def dc_dphi(self, y, phi):
        return y**2 / phi**3 - 1.0 / phi

    def g(self, mu):
        return mu

    def g1(self, mu):
        return np.ones_like(mu)

    def check_support(self, y):
        if not np.all(np.isfinite(np.asarray(y, dtype=float))):
            raise DomainError("normal responses must be finite")

    def log_density(self, y, lp, phi=None):
        phi = self._phi(phi)
        self.check_support(y)
        z = (np.asarray(y, dtype=float) - lp) / phi
        return -0.5 * z**2 - 0.5 * _LOG_2PI - np.log(phi)

    def score_components(self, y, lp, phi=None):
        phi = self._phi(phi)
        self.check_support(y)
        r = np.asarray(y, dtype=float) - lp
        return r / phi**2, r**2 / phi**3 - 1.0 / phi

    def draw(self, rng, lp, phi=None):
        phi = self._phi(phi)
        lp = np.asarray(lp, dtype=float)
        return lp + phi * rng.standard_normal(lp.shape)


_MODELS = {
    "poisson": PoissonRegression,
    "normal": NormalLinearRegression,
    "gaussian": NormalLinearRegression,
}


def get_model(name):
    """Look up a model by family name (``"poisson"`` or ``"normal"``)."""
    try:
        return _MODELS[name.lower()]()
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from poisson, normal") from None


@dataclass(frozen=True)
class Eta:
    """Structured view of a parameter vector: ``beta`` plus optional ``phi``."""

    beta: np.ndarray
    phi: float | None = None

    @classmethod
    def from_vector(cls, model, vector):
        beta, phi = model.split(vector)
        return cls(np.array(beta, dtype=float), None if model.dispersion_known else phi)

    def vector(self, model):
        if model.dispersion_known and self.phi is not None:
            raise DomainError("phi given for a model with known dispersion")
        return model.join(self.beta, self.phi)


class Observation(NamedTuple):
    y: float
    x: np.ndarray


@dataclass(frozen=True)
class Sample:
    """Responses ``y`` (n,) and design ``X`` (n, k)."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != y.shape[0]:
            raise DomainError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise DomainError("design matrix must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @classmethod
    def from_observations(cls, observations):
        obs = list(observations)
        return cls(np.array([o.y for o in obs]), np.array([np.atleast_1d(o.x) for o in obs]))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    def __iter__(self):
        for yi, xi in zip(self.y, self.X):
            yield Observation(float(yi), xi)

    def __len__(self):
        return self.n
