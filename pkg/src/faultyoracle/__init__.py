"""Continuous-time unstructured search with a dephasing Hamiltonian oracle.

Simulates the noisy analog Grover dynamics, tracks the Frobenius-norm
progress measure against the oracle-free evolution, and checks the
runtime lower bound ``T >= N * 2*gamma*(2p^2 - 1) / (gamma^2 + 4E^2)``.
"""

from faultyoracle.quantum_core import (
    DegenerateDecomposition,
    DensityMatrix,
    HermitianOperator,
    PureState,
    basis_state,
    fidelity_upper_bound,
    frobenius_norm_sq_diff,
    projector,
    trace_distance,
    two_dim_decompose,
    uniform_state,
)
from faultyoracle.dynamics import (
    IntegrationError,
    IntegratorConfig,
    LindbladGenerator,
    NoiseTrajectoryConfig,
    Trajectory,
    evolve_lindblad,
    evolve_schrodinger,
    lindblad_rhs,
    stochastic_oracle_run,
)
from faultyoracle.search_model import (
    ReducedModel,
    SearchModel,
    build_no_oracle_generator,
    build_oracle_generator,
    build_reduced_model,
    success_probability,
)
from faultyoracle.progress import (
    BoundReport,
    PairedTrajectory,
    ProgressSample,
    growth_rate_cap,
    growth_rate_closed_form,
    growth_rate_direct,
    measure_runtime,
    optimal_coherence,
    paired_trajectory,
    progress_lower_bound_at_T,
    progress_measure,
    runtime_lower_bound,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDecomposition",
    "DensityMatrix",
    "HermitianOperator",
    "PureState",
    "basis_state",
    "fidelity_upper_bound",
    "frobenius_norm_sq_diff",
    "projector",
    "trace_distance",
    "two_dim_decompose",
    "uniform_state",
    "IntegrationError",
    "IntegratorConfig",
    "LindbladGenerator",
    "NoiseTrajectoryConfig",
    "Trajectory",
    "evolve_lindblad",
    "evolve_schrodinger",
    "lindblad_rhs",
    "stochastic_oracle_run",
    "ReducedModel",
    "SearchModel",
    "build_no_oracle_generator",
    "build_oracle_generator",
    "build_reduced_model",
    "success_probability",
    "BoundReport",
    "PairedTrajectory",
    "ProgressSample",
    "growth_rate_cap",
    "growth_rate_closed_form",
    "growth_rate_direct",
    "measure_runtime",
    "optimal_coherence",
    "paired_trajectory",
    "progress_lower_bound_at_T",
    "progress_measure",
    "runtime_lower_bound",
]
