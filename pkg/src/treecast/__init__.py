"""Hardcore-model broadcast on k-ary trees and its reconstruction analysis."""
from .errors import (
    CapacityError,
    ConditioningError,
    DomainError,
    NumericError,
    ParameterError,
    TreecastError,
)
from .model import BoundsReport, ModelParams, bounds_report, derive_from_lambda, derive_from_omega
from .posterior import AtomDistribution, MagnetizationMoments, PosteriorMode, atom_recursion
from .popdyn import Population, evolve_level, estimate_moments, run_decay, scan_threshold
from .tree import Configuration, TreeShape

__version__ = "0.1.0"
