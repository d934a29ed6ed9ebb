"""Exact and Monte Carlo tools for the solid-on-solid model above a hard floor."""

__version__ = "0.1.0"
