"""Matrix-free homogenization solvers with learned spectral preconditioners."""

from .grid import AxisBC, BoundaryCondition, DofMap, RegularGrid, build_dof_map, devectorize, vectorize
from .physics import (PhaseParams, ProblemSpec, assemble_matrix, assemble_rhs, effective_property,
                      homogeneous_spec, jacobi_diagonal, matvec, nrmse, recover_secondary)
from .transform import ModeSet, TransformPlan, build_mode_set
from .precond import (IdentityPreconditioner, JacobiPreconditioner, Symbol, SymbolPreconditioner,
                      fans_symbol, lemma1_bruteforce, spectrum_check, uno_symbol)
from .training import (TrainingFeatures, UnoWeights, loss_and_derivatives, naive_train,
                       newton_train, precompute_features)
from .solver import SolveConfig, SolveReport, estimate_condition, estimate_iterations, pcg, solve_spec

__version__ = "0.1.0"

__all__ = [
    "AxisBC",
    "BoundaryCondition",
    "DofMap",
    "RegularGrid",
    "build_dof_map",
    "devectorize",
    "vectorize",
    "PhaseParams",
    "ProblemSpec",
    "assemble_matrix",
    "assemble_rhs",
    "effective_property",
    "homogeneous_spec",
    "jacobi_diagonal",
    "matvec",
    "nrmse",
    "recover_secondary",
    "ModeSet",
    "TransformPlan",
    "build_mode_set",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "Symbol",
    "SymbolPreconditioner",
    "fans_symbol",
    "lemma1_bruteforce",
    "spectrum_check",
    "uno_symbol",
    "TrainingFeatures",
    "UnoWeights",
    "loss_and_derivatives",
    "naive_train",
    "newton_train",
    "precompute_features",
    "SolveConfig",
    "SolveReport",
    "estimate_condition",
    "estimate_iterations",
    "pcg",
    "solve_spec",
]

