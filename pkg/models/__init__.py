"""Data models package"""
from .data_models import (
    HestonParams, CharExponents, ClaimKind, ClaimSpec, ClaimSet, MomentData,
    HedgeSolution, SelectionStep, SelectionPath, SimConfig, PathBatch, ResidualSample
)

__all__ = [
    'HestonParams', 'CharExponents', 'ClaimKind', 'ClaimSpec', 'ClaimSet', 'MomentData',
    'HedgeSolution', 'SelectionStep', 'SelectionPath', 'SimConfig', 'PathBatch', 'ResidualSample'
]
