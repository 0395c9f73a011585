"""Gradient-descent coverage control on SO(3) for pinhole camera networks."""
from .kernels import BACKEND

__version__ = "0.1.0"
