"""Sensitivity analysis of finite irreducible Markov chains under perturbation
of the transition matrix, built on graph (arborescence) formulas."""

from perturbmc.core import (
    Chain,
    ChainError,
    Distribution,
    StateSpace,
    is_irreducible,
    parse_chain,
    serialize_chain,
)

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "ChainError",
    "Distribution",
    "StateSpace",
    "is_irreducible",
    "parse_chain",
    "serialize_chain",
    "__version__",
]
