"""Reflected BSDEs with jumps, optimal stopping and robust games on finite lattices."""

__version__ = "0.1.0"
