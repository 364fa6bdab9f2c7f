"""Singular heat kernels with a one-point potential, nonlinear log-Laplace
solvers, and weighted branching-particle Monte Carlo in dimensions 2 and 3."""

__version__ = "0.1.0"
