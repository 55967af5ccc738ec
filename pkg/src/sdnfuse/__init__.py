"""Unsupervised HSI/MSI fusion with coupled stick-breaking Dirichlet networks."""
from .kernels import available_backends, backend, use_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "backend", "use_backend", "__version__"]
