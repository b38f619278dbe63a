"""Boundary-integral solver for the periodic Dirichlet Laplace problem with one small hole per cell."""

__version__ = "0.1.0"
