"""Detect cyclists starting to move from motion history images of their silhouettes."""

__version__ = "0.1.0"
