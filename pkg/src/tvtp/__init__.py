"""Regime-switching autoregressions with time-varying transition probabilities."""

from .diagnostics import check_stationarity, companion_matrix, log_moment_check, m_matrix, minorization_coeff
from .estimator import RegimeSwitchingAR
from .filter import ZeroLikelihoodError, forward_filter, kim_smoother, loglik, loglik_oracle, smoothed_oracle
from .inference import confidence_intervals, covariance_bundle, hessian, lr_pvalue, score
from .model import Dataset, ModelSpec, ParamVector, SpecError, expand_states, load_spec, pack, relabel_regimes, unpack
from .montecarlo import CoverageReport, business_cycle_design, run_coverage
from .optimize import FitConfig, FitError, FitResult, fit, heuristic_init
from .simulate import simulate_covariates, simulate_latent_factor, simulate_tvtp
from .transition import base_transition, expanded_transition_matrix, omega_rho

__all__ = [
    "CoverageReport",
    "Dataset",
    "FitConfig",
    "FitError",
    "FitResult",
    "ModelSpec",
    "ParamVector",
    "RegimeSwitchingAR",
    "SpecError",
    "ZeroLikelihoodError",
    "base_transition",
    "business_cycle_design",
    "check_stationarity",
    "companion_matrix",
    "confidence_intervals",
    "covariance_bundle",
    "expand_states",
    "expanded_transition_matrix",
    "fit",
    "forward_filter",
    "hessian",
    "heuristic_init",
    "kim_smoother",
    "load_spec",
    "log_moment_check",
    "loglik",
    "loglik_oracle",
    "lr_pvalue",
    "m_matrix",
    "minorization_coeff",
    "omega_rho",
    "pack",
    "relabel_regimes",
    "run_coverage",
    "score",
    "simulate_covariates",
    "simulate_latent_factor",
    "simulate_tvtp",
    "smoothed_oracle",
    "unpack",
]

__version__ = "0.1.0"
