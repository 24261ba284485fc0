"""Semimartingale decompositions under enlargement by several random times."""

__version__ = "0.1.0"
