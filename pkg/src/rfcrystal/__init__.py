"""Planar ion crystals in a linear rf trap: secular dynamics, equilibria, micromotion and rf electronics."""

__version__ = "0.1.0"
