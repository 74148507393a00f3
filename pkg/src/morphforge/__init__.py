"""Numerical tools for optimal morphing of embedded curves and surfaces."""

__version__ = "0.1.0"
