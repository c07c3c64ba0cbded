"""Heston model, claim transforms and the Fourier moment engine"""
from .heston_model import char_exponents, critical_time, swap_rate
from .claims import choose_strip, laplace_transform, neuberger_portfolio, neuberger_weights
from .fourier_engine import QuadratureSettings, compute_moments, integrate_strip, option_price

__all__ = [
    'char_exponents', 'critical_time', 'swap_rate',
    'choose_strip', 'laplace_transform', 'neuberger_portfolio', 'neuberger_weights',
    'QuadratureSettings', 'compute_moments', 'integrate_strip', 'option_price'
]
