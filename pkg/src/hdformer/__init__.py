"""Long-range 1D signal classification with square tokens and a gated mixture of experts."""

from .config import ExperimentConfig
from .errors import ConfigError, DataError, DimensionError, HDformerError, NumericError
from .moe import ExpertSpec, HDformer

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "ExperimentConfig",
    "ExpertSpec",
    "HDformer",
    "HDformerError",
    "NumericError",
]
