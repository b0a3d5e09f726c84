"""Numerical Aubry-Mather / Mañé laboratory for exact magnetic Lagrangians on T²."""

__version__ = "0.1.0"
