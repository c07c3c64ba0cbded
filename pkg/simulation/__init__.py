"""Monte-Carlo verification of the analytic moments"""
from .mc_oracle import (
    estimate_moments, realized_error, simulate_paths, strategy_theta0, strategy_theta_u
)

__all__ = ['estimate_moments', 'realized_error', 'simulate_paths', 'strategy_theta0', 'strategy_theta_u']
