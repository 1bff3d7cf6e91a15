"""Learned stochastic local search for constraint satisfaction problems."""

from ._kernels import BACKEND
from .csp import Constraint, CspError, CspInstance, SoftAssignment, quality
from .cvgraph import ConstraintValueGraph, build, build_batch, relabel
from .policy import PolicyParameters

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Constraint", "CspError", "CspInstance", "SoftAssignment", "quality",
    "ConstraintValueGraph", "build", "build_batch", "relabel", "PolicyParameters",
]
