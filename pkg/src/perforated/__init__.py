"""Perforated spheres and disks: constructions, meshes and eigenvalue checks."""

__version__ = "0.1.0"
