"""Convex-integration construction of dissipative Euler flows on T^3.

The package builds Hoelder-continuous weak solutions of the incompressible
Euler equations by the mollify / glue / perturb iteration, at desk scale:
every inductive estimate is measured, every algebraic identity is checked
numerically.
"""

from .fields import (GridSpec, ScalarField, SymTensorField, VectorField,
                     curl, dealias, deriv, div_sym, divergence, gradient,
                     grad_vector, inv_laplacian, laplacian, leray, sample_at,
                     sym_outer, trace, traceless)
from .norms import holder_norm, seminorm

__all__ = [
    "GridSpec", "ScalarField", "VectorField", "SymTensorField",
    "deriv", "gradient", "divergence", "curl", "grad_vector", "div_sym",
    "laplacian", "inv_laplacian", "leray", "sym_outer", "trace", "traceless",
    "dealias", "sample_at", "holder_norm", "seminorm",
]

__version__ = "0.1.0"
