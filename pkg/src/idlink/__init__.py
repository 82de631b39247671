"""Noise-aware semi-supervised variational user identity linkage."""

__version__ = "0.1.0"
