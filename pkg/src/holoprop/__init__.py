"""Holomorphic equilibrium propagation: complex-nudged fixed-point dynamics and gradient estimators."""

__version__ = "0.1.0"
