"""Pseudo-spectral laboratory for perturbations of 3D Couette flow with buoyancy."""

__version__ = "0.1.0"
