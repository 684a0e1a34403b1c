"""Numerical solution of BSDEs whose terminal value is +infinity."""

__version__ = "0.1.0"
