"""Deep K-tuplet metric learning for few-shot classification on feature vectors."""

from ktuplet.errors import (
    ConfigError,
    DegenerateVectorError,
    DimensionError,
    KTupletError,
    OptimizerError,
    ParseError,
    SamplingError,
    SplitError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateVectorError",
    "DimensionError",
    "KTupletError",
    "OptimizerError",
    "ParseError",
    "SamplingError",
    "SplitError",
    "__version__",
]
