"""Precomputed lens transport maps."""

__version__ = "0.1.0"
