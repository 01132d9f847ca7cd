"""Taylor-Hood finite element machinery."""
from .assembly import (
    CoefficientField,
    assemble_diffusion,
    assemble_divergence,
    assemble_load,
    assemble_mass,
    assemble_pressure_mass,
    assemble_trilinear,
    coefficient_values,
    pressure_mean_vector,
)
from .boundary import ReducedSystem, apply_dirichlet
from .norms import error_norms_exact, forcing_power, l2_norm_sq, norms, weighted_dissipation
from .quadrature import quadrature_rule
from .space import ASSEMBLY_ORDER, ElementGeometry, FESpace

__all__ = [
    "ASSEMBLY_ORDER",
    "CoefficientField",
    "ElementGeometry",
    "FESpace",
    "ReducedSystem",
    "apply_dirichlet",
    "assemble_diffusion",
    "assemble_divergence",
    "assemble_load",
    "assemble_mass",
    "assemble_pressure_mass",
    "assemble_trilinear",
    "coefficient_values",
    "error_norms_exact",
    "forcing_power",
    "l2_norm_sq",
    "norms",
    "pressure_mean_vector",
    "quadrature_rule",
    "weighted_dissipation",
]
