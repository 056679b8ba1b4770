"""Data-driven conditioning of a reduced-rank GP basis with online
inference and learning via a noise-adaptive particle filter."""

from .conditioning import (
    CoefficientStack,
    ConditionedBasis,
    evaluate_reduced,
    evaluate_rho,
    orthonormality_defect,
    project,
    stack_coefficients,
    subspace_distance,
    svd_condition,
)
from .hilbert_gp import (
    BasisSpec,
    Domain,
    HilbertGpModel,
    Hyperparameters,
    OutOfDomainError,
    eigenfunction,
    eigenvalue,
    evaluate_expansion,
    fit_coefficients,
    kernel_approximation,
    make_basis_spec,
    optimize_hyperparameters,
    se_kernel,
    se_spectral_density,
)
from .models import BatteryParams, SimulationError, TargetFunction, Trajectory
from .particle_filter import (
    AugmentedStateModel,
    FilterDivergenceError,
    ParticleSet,
    init_particles,
    step,
)

__all__ = [
    "AugmentedStateModel",
    "BasisSpec",
    "BatteryParams",
    "CoefficientStack",
    "ConditionedBasis",
    "Domain",
    "FilterDivergenceError",
    "HilbertGpModel",
    "Hyperparameters",
    "OutOfDomainError",
    "ParticleSet",
    "SimulationError",
    "TargetFunction",
    "Trajectory",
    "eigenfunction",
    "eigenvalue",
    "evaluate_expansion",
    "evaluate_reduced",
    "evaluate_rho",
    "fit_coefficients",
    "init_particles",
    "kernel_approximation",
    "make_basis_spec",
    "optimize_hyperparameters",
    "orthonormality_defect",
    "project",
    "se_kernel",
    "se_spectral_density",
    "stack_coefficients",
    "step",
    "subspace_distance",
    "svd_condition",
]
