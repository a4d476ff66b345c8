"""Conditional factuality control: conformal set-valued selection over scored candidates."""

from cfc._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
