"""Adaptive image tiling, a noisy two-expert global adapter mixture,
learnable-query token compression with text-guided selection, a rank-one
bilinear factorization laboratory, and a staged-vs-joint toy trainer."""

from . import adapters, bilinear, numerics, pipeline, routing, slicing

__all__ = ["adapters", "bilinear", "numerics", "pipeline", "routing", "slicing"]
__version__ = "0.1.0"
