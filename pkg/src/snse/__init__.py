"""Stochastic Navier-Stokes solver with a dyadic cascade and Monte Carlo verification."""

__version__ = "0.1.0"
