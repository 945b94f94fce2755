"""Cascade Markov decision processes: modelling, Bellman solvers, simulation and singular control."""

from . import bellman, ctmc, cost, errors, model, modelfile, simulate, singular, zoo
from .bellman import (
    costate_verify,
    optimal_control,
    optimal_value,
    solve_bellman,
    solve_coupled_baseline,
    solve_diagonalizable,
    solve_partial_feedback,
)
from .cost import CostSpec
from .ctmc import CouplingClass, classify_coupling, diagonal_parts, generator_from_jumps, jump_matrix
from .model import (
    CascadeModel,
    ConstantPolicy,
    TabulatedPolicy,
    check_admissible,
    diagonalizable_sufficient,
    model_coupling,
    triangular_form,
)
from .simulate import estimate_eta, portfolio_series, simulate as simulate_path
from .singular import build_qp, qp_oracle_grid, solve_box_qp, state_costate_integrate, steady_state

__version__ = "0.1.0"
