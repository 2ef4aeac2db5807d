"""Mild-solution Navier-Stokes and Euler toolkit on periodic boxes."""

from .field_core import Field, Grid, NormReport, VectorField, make_field, norms

__all__ = ["Field", "Grid", "NormReport", "VectorField", "make_field", "norms"]
__version__ = "0.1.0"
