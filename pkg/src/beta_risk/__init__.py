"""beta-risk - Beta-distribution regression for location crash risk."""

__version__ = "0.1.0"

from .betadist import BetaParams, cdf, credible_interval, pdf, quantile
from .config import (
    DatasetSpec,
    LabelGenConfig,
    LossWeights,
    ModelConfig,
    RunConfig,
    TrainConfig,
    load_run_config,
)
from .errors import (
    BetaRiskError,
    ConfigError,
    DataIOError,
    DomainError,
    NumericError,
    StructuralError,
    TrainingError,
)

__all__ = [
    "BetaParams",
    "cdf",
    "pdf",
    "quantile",
    "credible_interval",
    "DatasetSpec",
    "LabelGenConfig",
    "LossWeights",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "load_run_config",
    "BetaRiskError",
    "ConfigError",
    "DataIOError",
    "DomainError",
    "NumericError",
    "StructuralError",
    "TrainingError",
]
