"""Adaptive multi-biometric verification over encrypted templates."""

__version__ = "0.1.0"
