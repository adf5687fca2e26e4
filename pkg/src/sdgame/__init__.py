"""Lower and upper values of zero-sum stochastic differential games on a lattice.

Backward dynamic programming over a locally consistent Markov chain, a
finite-difference Isaacs solver as a cross-oracle, epsilon-saddle extraction,
empirical bound suites and a strong-formulation Monte Carlo comparison.
"""

__version__ = "0.1.0"

from .chain import TransitionKernel, build_kernel
from .dpp import Policy, ValueField, evaluate_policies, one_step, solve_game
from .families import builtin_config, load_config, spec_from_config
from .hamiltonian import isaacs_check, lower_upper
from .model import (CFLError, Coefficients, ControlSet, GameSpec, Grid, SpecError, build_grid,
                    validate_spec)

__all__ = [
    "CFLError", "Coefficients", "ControlSet", "GameSpec", "Grid", "Policy", "SpecError",
    "TransitionKernel", "ValueField", "build_grid", "build_kernel", "builtin_config",
    "evaluate_policies", "isaacs_check", "load_config", "lower_upper", "one_step", "solve_game",
    "spec_from_config", "validate_spec",
]
