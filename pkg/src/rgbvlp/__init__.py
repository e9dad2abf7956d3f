"""Cramer-Rao bounds and ML estimators for RGB visible-light positioning."""

__version__ = "0.1.0"
