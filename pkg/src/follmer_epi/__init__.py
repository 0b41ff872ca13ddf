"""Numerical laboratory for Föllmer-process entropic stability estimates."""

__version__ = "0.1.0"
