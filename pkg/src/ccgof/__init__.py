"""Conditional-covariance (20/60/20 rule) goodness-of-fit tests for Gaussian dependence."""

__version__ = "0.1.0"

from .constants import SplitConstants, compute_constants, default_constants, solve_q_tilde
from .copulas import BivariateSample, CopulaSpec, Family, sample
from .conditional_moments import LoadingFactor, QuantileSplit, equilibrium_gap
from .test_statistics import RejectionSide, StatKind, decorrelate, l_stat, l_tilde, r_stat, r_tilde, t_stat, t_tilde
from .benchmark_tests import ad, bhep, cm, ms
from .monte_carlo import NullDistribution, PowerCell, p_value, power, power_many, simulate_null, simulate_nulls, threshold

__all__ = [
    "SplitConstants",
    "compute_constants",
    "default_constants",
    "solve_q_tilde",
    "BivariateSample",
    "CopulaSpec",
    "Family",
    "sample",
    "LoadingFactor",
    "QuantileSplit",
    "equilibrium_gap",
    "RejectionSide",
    "StatKind",
    "decorrelate",
    "t_stat",
    "l_stat",
    "r_stat",
    "t_tilde",
    "l_tilde",
    "r_tilde",
    "bhep",
    "ad",
    "cm",
    "ms",
    "NullDistribution",
    "PowerCell",
    "simulate_null",
    "simulate_nulls",
    "threshold",
    "p_value",
    "power",
    "power_many",
]
