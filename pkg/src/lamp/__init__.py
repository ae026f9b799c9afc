"""Lagged multistep posterior sampling for linear inverse problems."""

__version__ = "0.1.0"
