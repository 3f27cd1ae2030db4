"""Extreme multi-label ICD coding of clinical notes with a from-scratch transformer encoder."""

__version__ = "0.1.0"
