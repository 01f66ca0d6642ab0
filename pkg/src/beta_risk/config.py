"""
Configuration models for beta-risk.

All configuration is expressed as pydantic models so that invariants are
checked at construction time and the error names the offending field.
A RunConfig snapshot (``config.json``) is enough to reproduce any run.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DataIOError

logger = logging.getLogger(__name__)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class PositiveBetaMode(str, Enum):
    """How beta_t is chosen for positive samples."""

    VERBATIM = "verbatim"
    MEAN_REALIZING = "mean_realizing"


class Activation(str, Enum):
    RECTIFIER = "rectifier"
    TANH = "tanh"


class EceConvention(str, Enum):
    POSITIVE = "positive"
    MAX = "max"


class LabelGenConfig(_Frozen):
    """Parameters of procedural target generation."""

    base_K: float = Field(22.0, gt=0)
    epsilon: float = Field(1e-5, gt=0)
    mu_min: float = Field(0.18, gt=0, lt=1)
    k_min: float = Field(18.0, gt=0)
    w_dist: float = Field(0.7, ge=0, le=1)
    w_size: float = Field(0.3, ge=0, le=1)
    positive_beta_mode: PositiveBetaMode = PositiveBetaMode.VERBATIM

    @model_validator(mode="after")
    def _check_consistency(self) -> "LabelGenConfig":
        if abs(self.w_dist + self.w_size - 1.0) > 1e-9:
            raise ValueError("w_dist + w_size must equal 1")
        if self.k_min > self.base_K:
            raise ValueError("k_min must not exceed base_K")
        return self


class LossWeights(_Frozen):
    """Weights of the compound objective and the BCE class weights."""

    lambda1: float = Field(5.0, ge=0)
    lambda2: float = Field(1.0, ge=0)
    class_weights: Tuple[float, float] = (1.25948, 4.85382)

    @field_validator("class_weights")
    @classmethod
    def _positive_weights(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if any(w <= 0 for w in value):
            raise ValueError("class weights must be positive")
        return value

    def class_weight(self, label: int) -> float:
        return self.class_weights[int(label)]


class ModelConfig(_Frozen):
    """Topology of the shared encoder and the two heads."""

    num_scales: int = Field(3, ge=1)
    feature_dim: int = Field(64, ge=1)
    encoder_widths: List[int] = Field(default_factory=lambda: [32, 16])
    dist_head_widths: List[int] = Field(default_factory=list)
    cls_head_widths: List[int] = Field(default_factory=list)
    activation: Activation = Activation.RECTIFIER
    alpha_beta_floor: float = Field(1e-4, gt=0)

    @field_validator("encoder_widths")
    @classmethod
    def _nonempty_encoder(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("encoder needs at least one layer")
        if any(w <= 0 for w in value):
            raise ValueError("layer widths must be positive")
        return value

    @field_validator("dist_head_widths", "cls_head_widths")
    @classmethod
    def _positive_hidden(cls, value: List[int]) -> List[int]:
        if any(w <= 0 for w in value):
            raise ValueError("layer widths must be positive")
        return value

    @property
    def embedding_width(self) -> int:
        return self.num_scales * self.encoder_widths[-1]


class ScheduleConfig(_Frozen):
    """Cosine annealing with warm restarts, stepped per epoch."""

    T0: int = Field(10, ge=1)
    Tmult: int = Field(2, ge=1)
    eta_min: float = Field(0.0, ge=0)


def _default_training_labels() -> LabelGenConfig:
    # supervision during training uses a wider epsilon than the LabelGenConfig default
    return LabelGenConfig(epsilon=0.08)


class TrainConfig(_Frozen):
    """Optimisation, augmentation and supervision settings."""

    epochs: int = Field(30, ge=0)
    batch_size: int = Field(32, ge=1)
    lr_backbone: float = Field(1e-4, gt=0)
    lr_dist_head: float = Field(0.02, gt=0)
    lr_cls_head: float = Field(1e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    crop_area_range: Tuple[float, float] = (0.5, 1.0)
    jitter_range: Optional[Tuple[float, float]] = (0.6, 1.4)
    flips: bool = True
    loss: LossWeights = Field(default_factory=LossWeights)
    label: LabelGenConfig = Field(default_factory=_default_training_labels)
    seed: int = Field(0, ge=0)

    @field_validator("crop_area_range")
    @classmethod
    def _check_crop_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop_area_range must satisfy 0 < low <= high <= 1")
        return value

    @field_validator("jitter_range")
    @classmethod
    def _check_jitter(
        cls, value: Optional[Tuple[float, float]]
    ) -> Optional[Tuple[float, float]]:
        if value is not None and not 0.0 < value[0] <= value[1]:
            raise ValueError("jitter_range must satisfy 0 < low <= high")
        return value

    @field_validator("adam_betas")
    @classmethod
    def _check_betas(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError("adam betas must lie in [0, 1)")
        return value

    def group_learning_rates(self) -> Dict[str, float]:
        return {
            "backbone": self.lr_backbone,
            "dist_head": self.lr_dist_head,
            "cls_head": self.lr_cls_head,
        }


class DatasetSpec(_Frozen):
    """Size, class mix and seeds of a synthetic scene corpus."""

    n_samples: int = Field(2000, ge=1)
    positive_fraction: float = Field(0.35, ge=0, le=1)
    hard_negative_fraction: float = Field(0.7, ge=0, le=1)
    noise_level: float = Field(0.1, ge=0)
    seed: int = Field(0, ge=0)
    grid_size: int = Field(64, ge=8)
    num_scales: int = Field(3, ge=1)
    val_fraction: float = Field(0.15, ge=0, lt=1)
    test_fraction: float = Field(0.15, ge=0, lt=1)

    @model_validator(mode="after")
    def _check_splits(self) -> "DatasetSpec":
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ValueError("val_fraction + test_fraction must be < 1")
        return self


class RunConfig(_Frozen):
    """Everything needed to reproduce a command's output."""

    data: DatasetSpec = Field(default_factory=DatasetSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: Optional[str] = None
    # the command that wrote the snapshot and its own parameters
    command: Optional[str] = None
    args: Dict[str, Any] = Field(default_factory=dict)

    def snapshot(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def prune_none(values: Dict[str, Any]) -> Dict[str, Any]:
    """Drop unset flags (None) recursively, keeping nested sections."""
    pruned: Dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, dict):
            nested = prune_none(value)
            if nested:
                pruned[key] = nested
        elif value is not None:
            pruned[key] = value
    return pruned


def load_run_config(
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Build a RunConfig: flags override file values, which override defaults."""
    values: Dict[str, Any] = {}
    if config_file is not None:
        path = Path(config_file)
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except OSError as e:
            raise DataIOError(path, f"cannot read config file: {e}") from e
        except json.JSONDecodeError as e:
            raise DataIOError(path, f"config file is not valid JSON: {e}") from e
        logger.info(f"Loaded config file {path}")
    if overrides:
        values = _deep_merge(values, prune_none(overrides))
    return RunConfig.model_validate(values)
