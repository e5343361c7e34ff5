"""Gauge-aware inverse boundary value toolkit on the unit disk."""

__version__ = "0.1.0"
