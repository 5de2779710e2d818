"""Probabilistic constellation shaping by importance-weighted gradient learning."""
from ._kernels import BACKEND
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
