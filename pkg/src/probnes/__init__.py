"""Probabilistic natural evolution strategies with Bayesian-quadrature gradients."""

__version__ = "0.1.0"
