"""Numerical Regge calculus on chart manifolds."""

__version__ = "0.1.0"
