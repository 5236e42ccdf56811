"""sidforge - topology-aware semantic IDs and reward design for next-POI recommendation."""

__version__ = "0.1.0"
