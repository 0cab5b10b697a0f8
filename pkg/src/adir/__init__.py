"""Adaptive diffusion image reconstruction at desk scale."""

from __future__ import annotations

from .errors import AdirError, DomainError, InfraError
from .result import Err, Ok, Result
from .use_case import UseCase

__version__ = "0.1.0"

__all__ = [
    "AdirError",
    "DomainError",
    "Err",
    "InfraError",
    "Ok",
    "Result",
    "UseCase",
    "__version__",
]
