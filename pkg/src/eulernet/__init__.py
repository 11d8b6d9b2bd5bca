"""Residual networks read as forward-Euler integrators: training, sweeps and stability diagnostics."""

__version__ = "0.1.0"
