"""Closed-form minimax bounds and concentration constants."""

from .theory_service import BoundQuery, bound, bound_pair, c_delta

__all__ = ["BoundQuery", "bound", "bound_pair", "c_delta"]
