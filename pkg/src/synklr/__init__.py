"""Synchronous k-level reasoning hierarchies for small cooperative card games."""

__version__ = "0.1.0"
