"""Closed-loop gain synthesis for fractional-order LQ tracking problems."""

from ._backend import BACKEND

__all__ = ["BACKEND", "__version__"]

__version__ = "0.1.0"
