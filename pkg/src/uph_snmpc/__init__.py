"""Stochastic NMPC with polynomial chaos and an uncertainty propagation horizon."""

__version__ = "0.1.0"
