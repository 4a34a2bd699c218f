"""Synthetic aneurysm maps from equilibrated growth-and-remodeling insults, and
DeepONet surrogates that recover the insult from dilatation and distensibility."""
from ._kernels import BACKEND
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FormatError,
    NumericalError,
    ParameterError,
    StructuralError,
    TaaOnetError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ConvergenceError", "DomainError", "FormatError", "NumericalError",
    "ParameterError", "StructuralError", "TaaOnetError", "__version__",
]
