"""Parametric operator learning for 1D unstable-flame PDEs."""

__version__ = "0.1.0"
