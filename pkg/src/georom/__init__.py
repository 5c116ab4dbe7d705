"""Geometry-informed reduced-order modelling of steady 2D channel flow."""
__version__ = "0.1.0"
