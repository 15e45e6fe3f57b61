"""Coupled Stokes-Darcy mixed finite elements with a divergence-free
right-hand-side reconstruction, plus the benchmark drivers built on top."""

__version__ = "0.1.0"
