"""Ptychographic reconstruction with coordinate-based neural fields."""

__version__ = "0.1.0"
