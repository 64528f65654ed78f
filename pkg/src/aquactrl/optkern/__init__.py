"""Optimization kernel: convex QP, binary branch and bound, and SLP."""

from .qp import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, QpProblem, SolveStatus,
                 find_feasible, solve_qp)
from .miqp import MipProblem, QuadConstraint, solve_miqp
from .slp import fd_gradient, solve_slp

__all__ = [
    "QpProblem", "SolveStatus", "MipProblem", "QuadConstraint",
    "solve_qp", "solve_miqp", "solve_slp", "find_feasible", "fd_gradient",
    "OPTIMAL", "INFEASIBLE", "ITERATION_LIMIT", "UNBOUNDED",
]
