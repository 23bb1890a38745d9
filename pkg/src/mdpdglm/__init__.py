"""Minimum density power divergence estimation for GLMs with random covariates,
and the robust Wald-type tests built on it."""

__version__ = "0.1.0"

from .asymp import CovariateDistribution, SandwichMatrices, are, sandwich_analytic, sandwich_empirical
from .dpd import GammaSet, dpd_objective, gamma_set, psi_alpha
from .errors import (DomainError, MdpdeError, NonConvergence, NotPositiveDefinite, RankDeficient,
                     SeparationError, Singular)
from .estim import FitOptions, MdpdeFit, fit_mdpde, fit_path
from .model import Eta, NormalLinearRegression, Observation, PoissonRegression, Sample, get_model
from .robust import ContaminationPoint, IfGrid, if2_test, if_estimator, if_grid_scan, pif_test
from .simharness import SimConfig, SimReport, generate_sample, run_level_power_study
from .wald import (LinearHypothesis, WaldResult, contaminated_contiguous_power, contiguous_power,
                   noncentral_chisq_sf, power_fixed_alternative, required_sample_size,
                   wald_statistic)
