"""
Procedural target generation.

Maps a sample's binary label and the geometry of its random crop to a
target Beta distribution. Negatives always get a low-risk, high-certainty
target; positives get a target whose mean and concentration grow with the
crop's influence score (centrality and relative size).
"""

import math
from dataclasses import dataclass

from .betadist import BetaParams
from .config import LabelGenConfig, PositiveBetaMode
from .errors import DomainError, StructuralError


@dataclass(frozen=True)
class CropGeometry:
    """Square crop of a square source grid, in pixels."""

    source_size: int
    crop_size: int
    offset_x: int
    offset_y: int

    def __post_init__(self) -> None:
        if not 0 < self.crop_size <= self.source_size:
            raise StructuralError(
                f"crop size {self.crop_size} must lie in (0, {self.source_size}]"
            )
        limit = self.source_size - self.crop_size
        if not (0 <= self.offset_x <= limit and 0 <= self.offset_y <= limit):
            raise StructuralError(
                f"crop offset ({self.offset_x}, {self.offset_y}) outside [0, {limit}]"
            )

    @classmethod
    def full(cls, source_size: int) -> "CropGeometry":
        return cls(source_size, source_size, 0, 0)

    @classmethod
    def centered(cls, source_size: int, crop_size: int) -> "CropGeometry":
        offset = (source_size - crop_size) // 2
        return cls(source_size, crop_size, offset, offset)


def normalized_distance(g: CropGeometry) -> float:
    """Crop-center to source-center distance over half the source diagonal."""
    half = g.source_size / 2.0
    cx = g.offset_x + g.crop_size / 2.0
    cy = g.offset_y + g.crop_size / 2.0
    distance = math.hypot(cx - half, cy - half)
    return min(1.0, max(0.0, distance / math.hypot(half, half)))


def normalized_size(g: CropGeometry) -> float:
    """Crop area over source area."""
    return (g.crop_size / g.source_size) ** 2


def influence_from(d_norm: float, s_norm: float, c: LabelGenConfig) -> float:
    return c.w_dist * (1.0 - d_norm) + c.w_size * s_norm


def influence(g: CropGeometry, c: LabelGenConfig) -> float:
    """Weighted centrality plus relative size, in [0, 1]."""
    return influence_from(normalized_distance(g), normalized_size(g), c)


def positive_moments(infl: float, c: LabelGenConfig) -> tuple[float, float]:
    """Target mean mu_t and concentration k_t for a positive at this influence."""
    mu_t = c.mu_min + (1.0 - c.mu_min) * infl
    k_t = c.k_min + (c.base_K - c.k_min) * infl
    return mu_t, k_t


def target_from_influence(label: int, infl: float, c: LabelGenConfig) -> BetaParams:
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")
    if label == 0:
        return BetaParams(c.epsilon, c.base_K)

    mu_t, k_t = positive_moments(infl, c)
    if c.positive_beta_mode is PositiveBetaMode.MEAN_REALIZING:
        # a centered full-size crop gives mu_t = 1; keep beta strictly positive
        return BetaParams(mu_t * k_t, max((1.0 - mu_t) * k_t, c.epsilon))
    return BetaParams(mu_t * k_t, c.epsilon)


def make_target(label: int, g: CropGeometry, c: LabelGenConfig) -> BetaParams:
    """Target Beta distribution for a crop of a sample with the given label."""
    return target_from_influence(label, influence(g, c), c)
