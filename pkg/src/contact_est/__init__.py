"""Differentiable growth-distance contact features and force-based pose estimation."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
