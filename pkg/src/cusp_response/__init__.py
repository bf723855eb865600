"""Transfer operators, invariant densities and linear response for cusp maps."""
from .errors import ConfigError, ConvergenceError, DomainError, SingularityError
from .function_space import (
    GradedMesh, NormConfig, SplineFunction, graded_mesh, lp_norm, mean_zero_project, project,
    sobolev_norm,
)
from .map_family import AssumptionAudit, CuspTentFamily, MapModel, audit_assumptions
from .response import ResponseReport, coefficients, kernel_q, kernel_q_family, response_sweep
from .spectral import InvariantDensity, SpectrumReport, invariant_density, ulam_spectrum
from .transfer_operator import OperatorContext, apply, make_context, ulam_matrix

__all__ = [
    "AssumptionAudit", "ConfigError", "ConvergenceError", "CuspTentFamily", "DomainError",
    "GradedMesh", "InvariantDensity", "MapModel", "NormConfig", "OperatorContext",
    "ResponseReport", "SingularityError", "SpectrumReport", "SplineFunction", "apply",
    "audit_assumptions", "coefficients", "graded_mesh", "invariant_density", "kernel_q",
    "kernel_q_family", "lp_norm", "make_context", "mean_zero_project", "project",
    "response_sweep", "sobolev_norm", "ulam_matrix", "ulam_spectrum",
]

__version__ = "0.1.0"
