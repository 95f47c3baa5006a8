"""Optimal laser control of resonantly driven two-level systems."""

__version__ = "0.3.0"
