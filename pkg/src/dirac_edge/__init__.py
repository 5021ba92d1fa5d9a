"""Semiclassical edge dynamics for 2x2 Dirac operators."""

__version__ = "0.1.0"
