"""Pseudo-morphological layers and surrogate-driven cell search."""

__version__ = "0.1.0"
