"""Overloaded cyclic polling networks with rerouting and random multi-gated service."""
from .model import (
    INF,
    DerivedQuantities,
    GatingIndexDistribution,
    ModelError,
    NetworkSpec,
    ServiceDistribution,
    SpecFormatError,
    derive,
    mean_visit_time_k,
    spec_from_dict,
    spec_to_dict,
    example_spec,
    validate,
)
from .branching import build_matrices, estimate_extinction, immigration_weights, perron
from .fluid import analyze, beta, build_skeleton, evaluate, locate, sample_trajectory, total_slopes

__version__ = "0.1.0"
