"""Branch-jump dynamics: unitary evolution plus a stochastic jump process over experience branches."""

__version__ = "0.1.0"
