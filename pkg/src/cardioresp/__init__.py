"""Cardiorespiratory variability features and balanced random forests."""

__version__ = "0.1.0"
