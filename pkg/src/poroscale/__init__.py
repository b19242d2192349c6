"""Two-scale porous-media simulator: coupled macro/cell diffusion with
evolving porosity, plus spectral probes of the frozen-coefficient
operators."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    HypothesisGateError,
    NumericalError,
    PoroscaleError,
)

__all__ = [
    "__version__",
    "PoroscaleError",
    "ConfigurationError",
    "NumericalError",
    "HypothesisGateError",
]
