"""Multigrid solvers for mixed-degree LDG multiphase Stokes problems."""

__version__ = "0.1.0"
