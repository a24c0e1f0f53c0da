"""Generalized Pareto regression with additive penalized-spline shape and scale."""

__version__ = "0.1.0"
