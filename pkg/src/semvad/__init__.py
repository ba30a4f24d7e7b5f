"""Streaming semantic endpoint detection."""

__version__ = "0.1.0"
