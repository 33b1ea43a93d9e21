"""Proximal Langevin samplers and empirical Bayes tuning for TV imaging models."""
from . import grid, forward_models, priors, samplers, sapg, diagnostics
from ._accel import get_backend, set_backend

__version__ = "0.1.0"

__all__ = ["grid", "forward_models", "priors", "samplers", "sapg", "diagnostics",
           "get_backend", "set_backend", "__version__"]
