"""Conditional Bohmian mechanics for a closed two-particle system in an energy eigenstate.

Natural units: hbar = 1 (kept as ``HBAR`` so formulas read naturally).
"""

__version__ = "0.1.0"

from condbohm.grid import BOX, HBAR, PERIODIC, Grid1D, Grid2D, GridError, make_grid
from condbohm.interp import FieldInterpolator, OutOfDomainError, interpolate
from condbohm.fields import (
    ComplexField2D, FieldError, PolarField, circulation, gradient, laplacian, node_threshold,
    polar_decompose, square_loop,
)
from condbohm.stationary import (
    ANALYTIC_SCENARIOS, SCENARIO_PARAMETERS, SCENARIOS, Eigenstate, EigenSolveError, Hamiltonian,
    PotentialSpec, ScenarioError, assemble_hamiltonian, build_scenario, coupled_ring_env,
    frozen_ground, ring_planewave_env, solve_eigenstate, vortex_oscillator,
)
from condbohm.dynamics import (
    BOHMIAN, SCALING, STREAM, Flow, NodeProximityError, RecordingError, StateFields, Trajectory,
    VelocityModel, bohmian_velocity, check_divergence_free, classical_trajectory,
    conditional_classical_trajectory, default_stream_function, integrate_trajectory,
    modified_velocity, propagate, rng_for, sample_ensemble,
)
from condbohm.conditional import (
    Classicality, ConditionalAnalyzer, ConditionalSlice, ResidualReport, SliceSeries,
    build_tilde, classicality_metrics, cond_schrodinger_residual, conditional_slice,
    conserving_normalization, convergence_order, fit_gauge, gamma_field, normalization_N,
    propagate_reference, pseudo_schrodinger_residual, quantum_potential, tilde_wavefunction,
)
from condbohm.experiments import (
    ConfigError, ExperimentConfig, run_classicality, run_equivariance, run_residuals,
    run_velocity_comparison,
)

__all__ = [name for name in dir() if not name.startswith("_") and name not in {
    "grid", "interp", "fields", "stationary", "dynamics", "conditional", "experiments", "cli"}]
__all__ += ["__version__"]
