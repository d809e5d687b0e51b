"""Compressive spectral classification with learned binary coding patterns."""

__version__ = "0.1.0"
