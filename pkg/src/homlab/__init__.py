"""Numerical homogenization of Dirichlet problems with varying operators and perforated domains."""

__version__ = "0.1.0"
