"""Markovian approximation of reduced dynamics for a simplified Pauli-Fierz model."""

from .model import (
    CutoffFn,
    MatterModel,
    build_harmonic_model,
    build_quartic_model,
    build_spin_model,
    sobolev_norm,
)
from .coupling import build_sphere_quadrature, coupling_block, free_evolved_block
from .lindblad import (
    RateMatrix,
    assemble_L_finite_t,
    convergence_L,
    eval_phi,
    eval_phi_star,
    lindblad_limit_on_populations,
    markov_semigroup,
    transition_rate_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "CutoffFn", "MatterModel", "build_harmonic_model", "build_quartic_model", "build_spin_model",
    "sobolev_norm", "build_sphere_quadrature", "coupling_block", "free_evolved_block",
    "RateMatrix", "assemble_L_finite_t", "convergence_L", "eval_phi", "eval_phi_star",
    "lindblad_limit_on_populations", "markov_semigroup", "transition_rate_matrix",
]
