"""Weakly damped MGT / JMGT pseudospectral toolkit."""

__version__ = "0.1.0"
