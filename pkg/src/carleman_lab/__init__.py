"""Desk-scale numerical laboratory for Carleman estimates and inverse source stability
of the damped wave equation."""

__version__ = "0.1.0"
