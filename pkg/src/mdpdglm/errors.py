"""Exception hierarchy shared by every module."""


class MdpdeError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(MdpdeError, ValueError):
    """An argument lies outside the support or canonical domain."""


class RankDeficient(MdpdeError, ValueError):
    """The design matrix does not have full column rank."""


class Singular(MdpdeError, ArithmeticError):
    """A matrix that must be inverted is singular or badly conditioned."""


class NotPositiveDefinite(Singular):
    """A matrix expected to be symmetric positive definite is not."""


class NonConvergence(MdpdeError, RuntimeError):
    """An iterative procedure stopped before meeting its tolerance."""


class SeparationError(NonConvergence):
    """The Poisson likelihood is unbounded along some direction of the design."""
