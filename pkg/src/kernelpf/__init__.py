"""Perron-Frobenius analysis for non-negative kernels with an atom."""

from .errors import KernelPFError
from .kernel import (
    WHOLE,
    AnalyticKernel,
    AtomKernel,
    DenseKernel,
    DensityKernel,
    GridSpace,
    Interval,
    Labels,
    Measure,
    RankOneRemarkKernel,
    TypeFunction,
    check_irreducible,
    detect_period,
    validate_atom,
)
from .series import RecurrenceClass, classify, compute_fn, compute_Fn, renewal_quotient, solve_R
from .invariant import check_subinvariance, invariant_pair, subinvariant_pair
from .asymptotics import perron_limit, power_iteration_oracle, resolvent_decomposition
from .io import parse_kernel_spec

__all__ = [
    "WHOLE",
    "AnalyticKernel",
    "AtomKernel",
    "DenseKernel",
    "DensityKernel",
    "GridSpace",
    "Interval",
    "KernelPFError",
    "Labels",
    "Measure",
    "RankOneRemarkKernel",
    "RecurrenceClass",
    "TypeFunction",
    "check_irreducible",
    "check_subinvariance",
    "classify",
    "compute_Fn",
    "compute_fn",
    "detect_period",
    "invariant_pair",
    "parse_kernel_spec",
    "perron_limit",
    "power_iteration_oracle",
    "renewal_quotient",
    "resolvent_decomposition",
    "solve_R",
    "subinvariant_pair",
    "validate_atom",
]
