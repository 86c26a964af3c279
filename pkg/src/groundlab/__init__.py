"""Desk-scale 3D visual grounding with offset and span supervision."""

__version__ = "0.1.0"
