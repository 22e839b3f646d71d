"""Thermodynamically consistent optimal control of noisy quantum gates."""

__version__ = "0.1.0"
