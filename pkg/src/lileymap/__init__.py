"""Bifurcation atlas of the Liley mean-field cortical model."""

__version__ = "0.1.0"
