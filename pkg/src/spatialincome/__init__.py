"""Spatially smoothed income distributions from grouped survey counts."""
from __future__ import annotations

__version__ = "0.1.0"

from .chains import PRIORS, run_chain
from .errors import (
    DerivativeError,
    FactorizationError,
    MomentConditionError,
    ParameterOverflowError,
    ParseError,
    SpatialIncomeError,
    ValidationError,
)
from .families import DG, FAMILIES, LN, SM, Family, cdf, density, get_family, gini, mean_income, transform
from .graph import AdjacencyGraph, EdgeScales, logdet_Q, precision_Q, trace_terms
from .likelihood import BoundaryGrid, GroupedCounts, aml_fit, find_mode, grad_hess, log_multinomial
from .mcmc import McmcConfig, PosteriorDraws, PriorConfig
from .pwd import run_pwd_chain
from .pwl import estimate_log_Cstar, run_pwl_chain
from .simulate import SimScenario, gen_geometry, gen_grouped, run_experiment, scenario_truth
from .summary import AreaSummary, PplResult, SimMetrics, ppl, sim_metrics, summarize

__all__ = [
    "__version__", "PRIORS", "FAMILIES", "LN", "SM", "DG", "Family", "get_family",
    "cdf", "density", "gini", "mean_income", "transform",
    "AdjacencyGraph", "EdgeScales", "logdet_Q", "precision_Q", "trace_terms",
    "BoundaryGrid", "GroupedCounts", "aml_fit", "find_mode", "grad_hess", "log_multinomial",
    "McmcConfig", "PosteriorDraws", "PriorConfig", "run_chain", "run_pwd_chain", "run_pwl_chain",
    "estimate_log_Cstar", "SimScenario", "gen_geometry", "gen_grouped", "run_experiment", "scenario_truth",
    "AreaSummary", "PplResult", "SimMetrics", "ppl", "sim_metrics", "summarize",
    "SpatialIncomeError", "ValidationError", "ParseError", "ParameterOverflowError", "MomentConditionError",
    "DerivativeError", "FactorizationError",
]
