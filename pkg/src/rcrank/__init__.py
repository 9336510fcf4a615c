"""Multimodal root-cause impact ranking for slow queries."""

__version__ = "0.1.0"
