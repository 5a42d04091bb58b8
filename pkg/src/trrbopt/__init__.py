"""Adaptive trust-region reduced-basis optimization for PDE-constrained
parameter estimation: a P1 finite element full-order model, a corrected
reduced-basis surrogate with certified error estimators, projected
Newton/BFGS trust-region solvers, and a reproducible elliptic benchmark."""

from .errors import (AssemblyError, ConfigError, DegenerateBasisError,
                     DimensionMismatch, EstimatorInapplicable, ModelError,
                     OrderingError, TrrbError)
from .model import (ParameterBox, ParametricProblem, SeparableForm,
                    ThetaCoefficient, affine_theta, constant_theta,
                    eps_active_set, project_onto_box)

__all__ = [
    "AssemblyError", "ConfigError", "DegenerateBasisError", "DimensionMismatch",
    "EstimatorInapplicable", "ModelError", "OrderingError", "TrrbError",
    "ParameterBox", "ParametricProblem", "SeparableForm", "ThetaCoefficient",
    "affine_theta", "constant_theta", "eps_active_set", "project_onto_box",
]

__version__ = "0.1.0"
