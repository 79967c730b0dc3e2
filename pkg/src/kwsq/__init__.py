"""Simulation workbench for k-wise statistical-query learning."""

__version__ = "0.1.0"
