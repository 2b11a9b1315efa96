"""N-player nonstationary Markov games with first-passage probability criteria.

Build a :class:`GameModel`, evaluate Markov multipolicies with the truncated
backward recursion, and certify approximate Nash equilibria.
"""

from .bellman import CellValues, MixedAction, apply_mixed, apply_pure, best_response
from .evaluation import (
    MarkovMultipolicy,
    SweepPlan,
    ValueTable,
    enumerate_oracle,
    evaluate_best_response,
    evaluate_policy,
    simulate,
    truncation_bound,
)
from .model import (
    GameModel,
    GoalLattice,
    StageModel,
    build_goal_lattice,
    canonicalize_goal,
    check_divergence,
    compute_beta,
    make_stage,
    validate_model,
)
from .solver import (
    Certificate,
    SolverParams,
    certify,
    enumeration_bound,
    grid_params,
    grid_round,
    horizon_for,
    solve_best_response_dynamics,
    solve_grid,
)

__version__ = "0.1.0"
