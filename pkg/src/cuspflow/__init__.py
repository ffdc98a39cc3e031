"""Numerical toolkit for conformal dynamics of geometrically finite Kleinian groups with cusps."""

__version__ = "0.1.0"
