"""Dynamical flow networks: simulation and input-to-state stability certificates."""

__version__ = "0.1.0"
