"""Loss functions between distributions."""

from .divergence_service import DivergenceSpec, builtin, evaluate, parse_divergence

__all__ = ["DivergenceSpec", "builtin", "evaluate", "parse_divergence"]
