"""Quenched large deviations for repeated quantum measurements in a random environment."""

__version__ = "0.1.0"
