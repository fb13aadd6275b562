"""Slip-wall Euler flow outside a disk with analytic-norm diagnostics."""

__version__ = "0.1.0"
