"""Cardinality-aware scheduling of multiport converter power transfers."""

__version__ = "0.1.0"
