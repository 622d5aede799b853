"""Extractive question answering by scoring every bounded-length passage span."""

__version__ = "0.1.0"
