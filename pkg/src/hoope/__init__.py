"""Climatology-constrained ensemble Kalman filtering of distributed parameters."""

__version__ = "0.1.0"
