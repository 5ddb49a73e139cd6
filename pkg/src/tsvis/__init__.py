"""Transient-stability-aware virtual inertia scheduling toolkit."""

from tsvis.grid import GridCase, load_case

__all__ = ["GridCase", "load_case"]
__version__ = "0.1.0"
