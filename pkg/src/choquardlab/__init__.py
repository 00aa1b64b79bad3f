"""Numerical Lyapunov-Schmidt reduction for the perturbed critical Choquard equation."""

from ._backend import NAME as BACKEND
from .bubble import BubbleParams, ProblemParams

__version__ = "0.1.0"
__all__ = ["BACKEND", "BubbleParams", "ProblemParams", "__version__"]
