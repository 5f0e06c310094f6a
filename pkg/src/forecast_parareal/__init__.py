"""Parareal with data-driven forecast initialization and coarse propagation."""

__version__ = "0.1.0"
