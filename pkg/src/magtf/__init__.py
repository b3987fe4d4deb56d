"""Numerical toolkit for magnetic Thomas-Fermi theory with a self-generated field."""

__version__ = "0.1.0"
