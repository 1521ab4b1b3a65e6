"""Conjugate Bayesian inference for count and rounded-data regression."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
