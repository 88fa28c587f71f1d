"""Numerical laboratory for localization diagnostics of disordered XXZ chains."""

__version__ = "0.1.0"
