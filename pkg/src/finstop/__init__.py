"""Finite stopping time controls for linear evolution problems."""

from . import errors

__version__ = "0.1.0"

__all__ = ["errors", "__version__"]
