"""Branching random walks: generating functions, extinction probabilities,
growth parameters, continuous-time counterparts and Monte Carlo checks."""
from branchwalk.model import (
    BRWModel,
    GeometricLaw,
    IndependentDiffusionLaw,
    ModelError,
    OffspringDistribution,
    SiteSpace,
    build_from_spec,
    first_moment,
    irreducible_classes,
    truncate,
)
from branchwalk.registry import build

__version__ = "0.1.0"

__all__ = [
    "BRWModel", "GeometricLaw", "IndependentDiffusionLaw", "ModelError",
    "OffspringDistribution", "SiteSpace", "build", "build_from_spec", "first_moment",
    "irreducible_classes", "truncate",
]
