"""Moment cache package"""
from .moment_cache import MomentCache, digest, fmt17

__all__ = ['MomentCache', 'digest', 'fmt17']
