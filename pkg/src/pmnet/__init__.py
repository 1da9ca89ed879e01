"""Simulator and analytics for dense low-cost PM monitoring networks."""

__version__ = "0.1.0"
