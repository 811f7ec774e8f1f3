"""Uplink ZF spectral efficiency of cell-free massive MIMO on the unit disk."""

__version__ = "0.1.0"
