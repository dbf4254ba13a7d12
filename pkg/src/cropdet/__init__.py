"""Detection machinery for healthy / stressed crop regions in UAV imagery."""

__version__ = "0.1.0"
