"""Fusion-aware mapping of Einsum cascades onto accelerators."""

__version__ = "0.1.0"
