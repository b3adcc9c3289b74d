"""Simulation and verification tools for two-level branching: virus particles that
branch inside cells which themselves divide."""
from .model import (
    CellWeight,
    DualState,
    InvalidParamsError,
    LimitState,
    ParticleState,
    Params,
    TestFunction,
    binomial_split_pmf,
    eval_dual_function,
    eval_polynomial,
    factorial_integral,
)
from .particle import SimulationError, cell_rates, sample_split_allocation, simulate_particle
from .limit import feller_forward_step, simulate_limit
from .dual import dual_feller_step, q_closed_form, q_integral, simulate_dual

__version__ = "0.1.0"

__all__ = [
    "CellWeight",
    "DualState",
    "InvalidParamsError",
    "LimitState",
    "ParticleState",
    "Params",
    "SimulationError",
    "TestFunction",
    "binomial_split_pmf",
    "cell_rates",
    "dual_feller_step",
    "eval_dual_function",
    "eval_polynomial",
    "factorial_integral",
    "feller_forward_step",
    "q_closed_form",
    "q_integral",
    "sample_split_allocation",
    "simulate_dual",
    "simulate_limit",
    "simulate_particle",
]
