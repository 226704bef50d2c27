"""Degenerate nonlinear diffusion with Robin boundary conditions as the
limit of viscous Cahn-Hilliard relaxations, in one space dimension."""

__version__ = "0.1.0"
