"""Numerical laboratory for Dynkin games and double-obstacle backward PDEs.

Solves one- and two-obstacle backward variational inequalities by a
penalty scheme (with a projected-relaxation oracle as cross-check),
recovers reflection densities and free boundaries, handles noise-driven
coefficients on a recombining binomial lattice, and verifies solved value
surfaces as Nash equilibria of the associated stopping game by Monte
Carlo simulation of the state equation.
"""

from .grids import ExtrapolationError, Field, GridSpec, apply_generator, apply_noise_coupling, interpolate
from .model import (
    HjbiCoefficients,
    ModelSpec,
    ObstacleProcess,
    SdeCoefficients,
    ValidationReport,
    build_hjbi,
    mollify,
    validate_model,
)
from .pdvi import (
    PenaltySchedule,
    ResidualReport,
    SolutionBundle,
    complementarity_residual,
    solve_one_obstacle,
    solve_penalized,
    solve_projected,
    solve_schedule,
)
from .blattice import BLattice, LatticeConfig, martingale_consistency, solve_on_lattice
from .simulate import PathBatch, simulate
from .game import (
    GameEstimate,
    StoppingStrategy,
    estimate_value,
    fixed_time,
    hit_lower,
    hit_upper,
    never,
    optimal_stopping_value,
    payoff,
    random_stop,
    saddle_check,
)
from .boundary import FreeBoundary, extract, monotonicity_check
from .fixtures import Fixture, fixture_keys, get_fixture, load_model

__version__ = "0.1.0"

__all__ = [
    "BLattice",
    "ExtrapolationError",
    "Field",
    "Fixture",
    "FreeBoundary",
    "GameEstimate",
    "GridSpec",
    "HjbiCoefficients",
    "LatticeConfig",
    "ModelSpec",
    "ObstacleProcess",
    "PathBatch",
    "PenaltySchedule",
    "ResidualReport",
    "SdeCoefficients",
    "SolutionBundle",
    "StoppingStrategy",
    "ValidationReport",
    "apply_generator",
    "apply_noise_coupling",
    "build_hjbi",
    "complementarity_residual",
    "estimate_value",
    "extract",
    "fixed_time",
    "fixture_keys",
    "get_fixture",
    "hit_lower",
    "hit_upper",
    "interpolate",
    "load_model",
    "martingale_consistency",
    "mollify",
    "monotonicity_check",
    "never",
    "optimal_stopping_value",
    "payoff",
    "random_stop",
    "saddle_check",
    "simulate",
    "solve_on_lattice",
    "solve_one_obstacle",
    "solve_penalized",
    "solve_projected",
    "solve_schedule",
    "validate_model",
]
