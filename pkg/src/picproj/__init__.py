"""Particle-in-cell advection and particle-mesh projections on 2D simplicial meshes."""

__version__ = "0.1.0"
