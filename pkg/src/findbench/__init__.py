"""Procedural black-box function interpretation benchmark engine."""

__version__ = "0.1.0"
