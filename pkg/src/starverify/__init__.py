"""Numerical hyperbolicity diagnostics for chain classes of vector fields."""

from .fieldspec import FieldSpec, parse_field, load_field, LORENZ_SOURCE

__all__ = ["FieldSpec", "parse_field", "load_field", "LORENZ_SOURCE"]
__version__ = "0.1.0"
