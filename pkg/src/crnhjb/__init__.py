"""Variational Hamiltonians of two-time-scale reaction networks and HJB solvers."""

__version__ = "0.1.0"
