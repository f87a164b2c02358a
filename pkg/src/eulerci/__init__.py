"""Convex-integration toolkit for the incompressible Euler equations on the torus."""

__version__ = "0.1.0"
