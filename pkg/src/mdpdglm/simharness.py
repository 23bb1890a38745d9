"""Monte Carlo level and power studies.

Each replicate draws its own stream from ``SeedSequence(seed, spawn_key=(i,))``
on a Philox counter generator, so replicate ``i`` is the same no matter how
many replicates run or in which order.  A replicate fits the MLE once and
starts every ``alpha > 0`` fit from it.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymp import CovariateDistribution, CovariateKind
from .errors import DomainError, MdpdeError, NonConvergence, Singular
from .estim import FitOptions, fit_mdpde
from .model import Sample, get_model
from .numerics import chisq_upper_point
from .robust import ContaminationPoint
from .wald import LinearHypothesis, wald_statistic

__all__ = [
    "ContaminationMode",
    "SimConfig",
    "AlphaSummary",
    "SimReport",
    "replicate_rng",
    "generate_sample",
    "run_level_power_study",
    "MAX_FAILURE_RATE",
]

MAX_FAILURE_RATE = 0.01


class ContaminationMode(enum.Enum):
    FIXED = "fixed"  # each observation is replaced with probability epsilon
    CONTIGUOUS = "contiguous"  # with probability epsilon / sqrt(n)


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _matrix(text):
    return [_floats(row) for row in text.split(";") if row.strip()]


def _fmt(values):
    return ",".join(repr(float(v)) for v in np.atleast_1d(values))


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a study.

    ``eta_true`` is the null-side parameter; data are generated at
    ``eta_true + drift / sqrt(n)`` so contiguous alternatives need no
    hand-computed parameter.
    """

    family: str
    covariate: CovariateDistribution
    eta_true: np.ndarray
    n: int
    replicates: int
    alphas: tuple = (0.0,)
    epsilon: float = 0.0
    contamination: ContaminationPoint | None = None
    mode: ContaminationMode = ContaminationMode.FIXED
    hypothesis: LinearHypothesis | None = None
    level: float = 0.05
    seed: int = 0
    drift: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "eta_true", np.atleast_1d(np.asarray(self.eta_true, dtype=float)))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "mode", ContaminationMode(self.mode))
        if self.drift is not None:
            object.__setattr__(self, "drift", np.atleast_1d(np.asarray(self.drift, dtype=float)))
            if self.drift.shape != self.eta_true.shape:
                raise DomainError("drift must have the same length as eta_true")
        get_model(self.family)
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if self.n < 1:
            raise DomainError("n must be at least 1")
        if not 0.0 <= self.epsilon < 1.0:
            raise DomainError("epsilon must lie in [0, 1)")
        if self.epsilon > 0 and self.contamination is None:
            raise DomainError("epsilon > 0 needs a contamination point")
        if any(a < 0 for a in self.alphas) or not self.alphas:
            raise DomainError("alphas must be a nonempty list of nonnegative values")
        if not 0.0 < self.level < 1.0:
            raise DomainError("level must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def model(self):
        return get_model(self.family)

    @property
    def eta_generating(self):
        if self.drift is None:
            return self.eta_true
        return self.eta_true + self.drift / math.sqrt(self.n)

    @property
    def contamination_probability(self):
        if self.mode is ContaminationMode.CONTIGUOUS:
            return self.epsilon / math.sqrt(self.n)
        return self.epsilon

    # -- key=value text form ---------------------------------------------
    def to_text(self):
        cov = self.covariate
        if cov.kind is CovariateKind.EMPIRICAL:
            raise DomainError("empirical covariate distributions are not serializable")
        lines = [
            f"family={self.family}",
            f"covariate={cov.kind.value}",
            f"covariate_mean={_fmt(cov.mu)}",
            f"covariate_sd={_fmt(cov.sd)}",
            f"intercept={str(cov.intercept).lower()}",
            f"eta_true={_fmt(self.eta_true)}",
            f"n={self.n}",
            f"replicates={self.replicates}",
            f"alphas={_fmt(self.alphas)}",
            f"epsilon={self.epsilon!r}",
            f"mode={self.mode.value}",
            f"level={self.level!r}",
            f"seed={int(self.seed)}",
        ]
        if self.contamination is not None:
            lines.append(f"contamination_y={self.contamination.y_t!r}")
            lines.append(f"contamination_x={_fmt(self.contamination.x_t)}")
        if self.hypothesis is not None:
            lines.append("L=" + ";".join(_fmt(row) for row in self.hypothesis.L))
            lines.append(f"l0={_fmt(self.hypothesis.l0)}")
        if self.drift is not None:
            lines.append(f"drift={_fmt(self.drift)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``key=value`` lines; ``#`` starts a comment.

        Raises
        ------
        DomainError
            With the offending line number for malformed or unknown entries.
        """
        known = {"family", "covariate", "covariate_mean", "covariate_sd", "intercept", "eta_true",
                 "n", "replicates", "alphas", "epsilon", "mode", "level", "seed",
                 "contamination_y", "contamination_x", "L", "l0", "drift"}
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise DomainError(f"line {lineno}: unknown key {key!r}")
            if key in raw:
                raise DomainError(f"line {lineno}: duplicate key {key!r}")
            raw[key] = (lineno, value)
        for key in ("family", "eta_true", "n", "replicates"):
            if key not in raw:
                raise DomainError(f"missing required key {key!r}")

        def get(key, conv, default=None):
            if key not in raw:
                return default
            lineno, value = raw[key]
            try:
                return conv(value)
            except (ValueError, TypeError, DomainError) as exc:
                raise DomainError(f"line {lineno}: bad value for {key}: {exc}") from None

        def boolean(v):
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {v!r}")
            return v.lower() in ("true", "1", "yes")

        kind = get("covariate", CovariateKind, CovariateKind.UNIVARIATE_NORMAL)
        if kind is CovariateKind.EMPIRICAL:
            raise DomainError(f"line {raw['covariate'][0]}: empirical covariates need a data file")
        mean = get("covariate_mean", _floats, [0.0])
        sd = get("covariate_sd", _floats, [1.0] * len(mean))
        intercept = get("intercept", boolean, False)
        try:
            cov = CovariateDistribution(kind, np.array(mean), np.array(sd), intercept=intercept)
        except DomainError as exc:
            raise DomainError(f"covariate specification: {exc}") from None
        point = None
        if "contamination_y" in raw or "contamination_x" in raw:
            point = ContaminationPoint(get("contamination_y", float, 0.0),
                                       get("contamination_x", _floats, [0.0]))
        hyp = None
        if "L" in raw:
            hyp = get("L", lambda v: LinearHypothesis(_matrix(v), get("l0", _floats)))
        return cls(
            family=get("family", str),
            covariate=cov,
            eta_true=get("eta_true", _floats),
            n=get("n", int),
            replicates=get("replicates", int),
            alphas=tuple(get("alphas", _floats, [0.0])),
            epsilon=get("epsilon", float, 0.0),
            contamination=point,
            mode=get("mode", ContaminationMode, ContaminationMode.FIXED),
            hypothesis=hyp,
            level=get("level", float, 0.05),
            seed=get("seed", int, 0),
            drift=get("drift", _floats),
        )


def replicate_rng(seed, index):
    """Independent generator for replicate ``index``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def generate_sample(config, index):
    """Replicate ``index`` of the study: n draws, each contaminated with the
    configured probability."""
    rng = replicate_rng(config.seed, index)
    model = config.model
    beta, phi = model.split(config.eta_generating)
    X = config.covariate.draw(rng, config.n)
    if X.shape[1] != np.asarray(beta).size:
        raise DomainError(f"covariates have dimension {X.shape[1]}, beta has {np.asarray(beta).size}")
    y = model.draw(rng, X @ beta, phi)
    p = config.contamination_probability
    if p > 0:
        hit = rng.random(config.n) < p
        y[hit] = config.contamination.y_t
        X[hit] = config.contamination.x_t
    return Sample(y, X)


@dataclass(frozen=True)
class AlphaSummary:
    alpha: float
    fits: int
    failures: int
    mean_eta: np.ndarray
    sd_eta: np.ndarray
    rejections: int
    rejection_rate: float
    rejection_se: float

    def as_row(self):
        row = {"alpha": self.alpha, "fits": self.fits, "failures": self.failures,
               "rejection_rate": self.rejection_rate, "rejection_se": self.rejection_se}
        for j, (m, s) in enumerate(zip(self.mean_eta, self.sd_eta)):
            row[f"mean_eta{j}"] = m
            row[f"sd_eta{j}"] = s
        return row


@dataclass(frozen=True)
class SimReport:
    config: SimConfig
    rows: tuple = field(default_factory=tuple)

    def by_alpha(self, alpha):
        for row in self.rows:
            if row.alpha == float(alpha):
                return row
        raise KeyError(alpha)


def _run_replicate(config, index, options):
    """Return per-alpha ``(eta_hat or None, statistic or None)``."""
    model = config.model
    sample = generate_sample(config, index)
    out = []
    try:
        mle = fit_mdpde(model, sample, 0.0, options)
    except (MdpdeError, ValueError, ArithmeticError):
        return [(None, None)] * len(config.alphas)
    for a in config.alphas:
        try:
            fit = mle if a == 0 else fit_mdpde(model, sample, a, options, start=mle.eta_hat)
            stat = None
            if config.hypothesis is not None:
                stat = wald_statistic(fit, config.hypothesis).statistic
        except (NonConvergence, Singular, DomainError, ValueError):
            out.append((None, None))
            continue
        out.append((fit.eta_hat, stat))
    return out


def _chunk(args):
    config, indices, options = args
    return [_run_replicate(config, i, options) for i in indices]


def run_level_power_study(config, workers=1, options=None):
    """Fit, test and aggregate every replicate.

    Raises
    ------
    NonConvergence
        More than 1% of replicates failed at some alpha.
    """
    if config.hypothesis is None:
        raise DomainError("a level/power study needs a hypothesis")
    options = options or FitOptions()
    indices = range(config.replicates)
    if workers > 1:
        chunks = [list(indices[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk, [(config, c, options) for c in chunks]))
        results = [None] * config.replicates
        for c, part in zip(chunks, parts):
            for i, res in zip(c, part):
                results[i] = res
    else:
        results = [_run_replicate(config, i, options) for i in indices]
    crit = chisq_upper_point(config.hypothesis.r, config.level)
    rows = []
    for j, a in enumerate(config.alphas):
        ok = [res[j] for res in results if res[j][0] is not None]
        failures = config.replicates - len(ok)
        if failures > MAX_FAILURE_RATE * config.replicates:
            raise NonConvergence(
                f"alpha={a:g}: {failures} of {config.replicates} replicates failed to fit")
        if ok:
            etas = np.array([e for e, _ in ok])
            mean, sd = etas.mean(axis=0), etas.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(etas.shape[1])
            rej = int(sum(s > crit for _, s in ok))
            rate = rej / len(ok)
            se = math.sqrt(rate * (1.0 - rate) / len(ok))
        else:
            p = config.eta_true.size
            mean, sd, rej, rate, se = np.full(p, np.nan), np.full(p, np.nan), 0, float("nan"), float("nan")
        rows.append(AlphaSummary(a, len(ok), failures, mean, sd, rej, rate, se))
    return SimReport(config, tuple(rows))
