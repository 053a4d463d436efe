"""Numerical laboratory for information scrambling in the transverse-field SK model."""

__version__ = "0.1.0"
