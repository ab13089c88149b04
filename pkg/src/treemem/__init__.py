"""Two membranes problems on truncated m-regular trees.

Solvers for the averaging equation L(u) = h, obstacle problems, and the
coupled two membranes system, plus a Monte Carlo simulator for the
associated two-board game.
"""

__version__ = "0.1.0"

from .errors import TreememError
from .tree import ROOT, NodeField, NodeId, TruncatedTree
from .funcspec import QuadratureParams, SourceTable, parse
from .operators import OperatorParams, s_h, solvability_check
from .single import DirichletProblem, solve_direct, solve_representation, solve_value_iteration
from .obstacle import ObstacleProblem, complementarity_residual, solve_above, solve_below
from .membranes import TmpSpec, coincidence_set, solve_alternating, solve_coupled
from .game import GameConfig, estimate_value, greedy_strategies, play_path

__all__ = [
    "TreememError", "ROOT", "NodeField", "NodeId", "TruncatedTree", "QuadratureParams", "SourceTable", "parse",
    "OperatorParams", "s_h", "solvability_check", "DirichletProblem", "solve_direct", "solve_representation",
    "solve_value_iteration", "ObstacleProblem", "complementarity_residual", "solve_above", "solve_below",
    "TmpSpec", "coincidence_set", "solve_alternating", "solve_coupled", "GameConfig", "estimate_value",
    "greedy_strategies", "play_path",
]
