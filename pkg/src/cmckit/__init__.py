"""Numerical toolkit for constant mean curvature surfaces in H^2 x R."""

__version__ = "0.1.0"
