"""Dual formulation of the nonlocal p-Laplacian, conductivity design, and localization checks."""

__version__ = "0.1.0"
