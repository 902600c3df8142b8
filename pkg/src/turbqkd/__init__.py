"""Cn2 forecasting and turbulent high-dimensional QKD link simulation."""

__version__ = "0.1.0"
