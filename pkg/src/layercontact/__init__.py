"""Quasi-static contact of stacked linear-elastic layers with interlayer Tresca friction."""

__version__ = "0.1.0"
