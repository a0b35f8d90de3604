"""Coarse-grained Monte Carlo for 1-D Ising chains with short- and long-range couplings."""
from ._backend import name as backend
from .cg import (
    CoarseHamiltonian,
    CorrelationTables,
    build_coarse_hamiltonian,
    build_coarse_kernel,
    h_cg0,
    h_cg0_delta,
    h_cg_long,
    phi_tables_exact,
    phi_tables_mc,
)
from .errors import (
    CapacityError,
    CGMCError,
    ConfigurationError,
    CoverageError,
    DomainError,
    SingularityError,
    ValidationFailure,
)
from .lattice import LatticeGeometry, coarse_map, coarse_prior_log_weight
from .oracle import BoundarySpec
from .potentials import ModelSpec
from .reconstruct import ReconstructionPlan, local_reconstruct, reconstruct
from .sampler import ChainConfig, run_cg_chain, run_constrained_cell_chain, run_micro_chain

__version__ = "0.1.0"

__all__ = [
    "backend", "CoarseHamiltonian", "CorrelationTables", "build_coarse_hamiltonian",
    "build_coarse_kernel", "h_cg0", "h_cg0_delta", "h_cg_long", "phi_tables_exact",
    "phi_tables_mc", "CapacityError", "CGMCError", "ConfigurationError", "CoverageError",
    "DomainError", "SingularityError", "ValidationFailure", "LatticeGeometry", "coarse_map",
    "coarse_prior_log_weight", "BoundarySpec", "ModelSpec", "ReconstructionPlan",
    "local_reconstruct", "reconstruct", "ChainConfig", "run_cg_chain",
    "run_constrained_cell_chain", "run_micro_chain", "__version__",
]
