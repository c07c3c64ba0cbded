"""Hedge solvers and sparse portfolio selection"""
from .hedge_solver import (
    hedging_error, relative_hedge_contribution, solve_constrained, solve_pinv, solve_unconstrained
)
from .sparse_selector import (
    SparseSelector, brute_force, greedy_backward, greedy_forward, lasso_path, leaps_and_bounds
)

__all__ = [
    'hedging_error', 'relative_hedge_contribution', 'solve_constrained', 'solve_pinv',
    'solve_unconstrained', 'SparseSelector', 'brute_force', 'greedy_backward', 'greedy_forward',
    'lasso_path', 'leaps_and_bounds'
]
