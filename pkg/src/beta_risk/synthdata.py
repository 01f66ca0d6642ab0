"""
Seeded synthetic multi-scale scenes with planted hazard motifs.

Each scene is a continuous 2-D field rendered at several zoom levels
(scale 0 is the widest view, each further scale halves the ground extent).
Positives carry a hazard motif at the scene center: two crossing road
segments plus a radial bump. Hard negatives carry road-like lines that
stay away from the center; easy negatives are smooth background only.
Every grid is regenerated from the per-sample seed, so dataset files only
store the seeds.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DatasetSpec
from .errors import StructuralError
from .jsonl_processor import read_jsonl, write_jsonl
from .labelgen import CropGeometry

logger = logging.getLogger(__name__)

DATASET_FORMAT = 1
POOL_CELLS = 4
STATS_PER_CELL = 4
FEATURES_PER_SCALE = POOL_CELLS * POOL_CELLS * STATS_PER_CELL
# smallest window that still gives every pooling cell two pixels a side
MIN_WINDOW = 2 * POOL_CELLS

SPLITS = ("train", "val", "test")
KIND_POSITIVE = "positive"
KIND_HARD = "hard_negative"
KIND_EASY = "easy_negative"

# synthetic coordinates; a box of roughly 40 km x 33 km
LON_RANGE = (-98.70, -98.30)
LAT_RANGE = (29.30, 29.60)

ROAD_WIDTH = 0.03
ROAD_AMPLITUDE = 0.8
SEGMENT_HALF_LENGTH = 0.6
BUMP_SIGMA = 0.12
BUMP_AMPLITUDE = 1.2
BACKGROUND_AMPLITUDE = 0.05


@dataclass(frozen=True)
class SampleRecord:
    """Per-sample line of a dataset file; grids are rebuilt from `seed`."""
    sample_id: int
    label: int
    scene_kind: str
    seed: int
    lon: float
    lat: float
    split: str

    def to_dict(self) -> Dict[str, object]:
        return {"kind": "sample", **asdict(self)}


@dataclass
class Scene:
    """One location: multi-scale grids, label and geolocation."""
    scales: List[np.ndarray]
    label: int
    location: Tuple[float, float]
    seed: int
    sample_id: int = 0
    scene_kind: str = KIND_EASY
    split: str = "train"

    @property
    def grid_size(self) -> int:
        return self.scales[0].shape[0]


@dataclass
class Corpus:
    """A rendered dataset: its spec and its scenes in sample order."""
    spec: DatasetSpec
    scenes: List[Scene] = field(default_factory=list)

    def split(self, name: str) -> List[Scene]:
        if name not in SPLITS:
            raise StructuralError(f"unknown split '{name}', expected one of {SPLITS}")
        return [s for s in self.scenes if s.split == name]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_records(spec: DatasetSpec) -> List[SampleRecord]:
    """Labels, kinds, seeds, locations and splits for every sample."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    n_pos = _round_half_up(n * spec.positive_fraction)
    n_neg = n - n_pos
    n_hard = _round_half_up(n_neg * spec.hard_negative_fraction)
    kinds = np.array(
        [KIND_POSITIVE] * n_pos + [KIND_HARD] * n_hard + [KIND_EASY] * (n_neg - n_hard)
    )
    kinds = kinds[rng.permutation(n)]
    seeds = rng.integers(0, 2**31 - 1, size=n)
    lons = rng.uniform(*LON_RANGE, size=n)
    lats = rng.uniform(*LAT_RANGE, size=n)

    # stratified split assignment, one seeded permutation per class
    splits = np.array(["train"] * n, dtype=object)
    labels = (kinds == KIND_POSITIVE).astype(int)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        n_test = _round_half_up(idx.size * spec.test_fraction)
        n_val = _round_half_up(idx.size * spec.val_fraction)
        splits[idx[:n_test]] = "test"
        splits[idx[n_test : n_test + n_val]] = "val"

    return [
        SampleRecord(
            sample_id=i,
            label=int(labels[i]),
            scene_kind=str(kinds[i]),
            seed=int(seeds[i]),
            lon=round(float(lons[i]), 6),
            lat=round(float(lats[i]), 6),
            split=str(splits[i]),
        )
        for i in range(n)
    ]


def _segment_field(
    x: np.ndarray, y: np.ndarray, angle: float, offset: float, half_length: float
) -> np.ndarray:
    """Road profile along a line at `offset` from the center, clipped to a segment."""
    c, s = math.cos(angle), math.sin(angle)
    perp = -x * s + y * c - offset
    along = x * c + y * s
    overshoot = np.maximum(np.abs(along) - half_length, 0.0)
    dist2 = perp * perp + overshoot * overshoot
    return ROAD_AMPLITUDE * np.exp(-dist2 / (ROAD_WIDTH * ROAD_WIDTH))


def _scene_layout(kind: str, rng: np.random.Generator) -> Dict[str, object]:
    """Draw the scale-independent description of one scene."""
    layout: Dict[str, object] = {
        "level": rng.uniform(0.2, 0.4),
        "waves": [
            (
                rng.uniform(0.5, 1.5),
                rng.uniform(0.0, math.pi),
                rng.uniform(0.0, 2.0 * math.pi),
            )
            for _ in range(3)
        ],
        "roads": [],
        "motif": None,
    }
    if kind == KIND_POSITIVE:
        first = rng.uniform(0.0, math.pi)
        second = first + rng.uniform(math.pi / 4.0, 3.0 * math.pi / 4.0)
        layout["motif"] = (first, second)
    elif kind == KIND_HARD:
        roads = []
        for _ in range(2):
            offset = rng.uniform(0.35, 0.9) * (1.0 if rng.uniform() < 0.5 else -1.0)
            roads.append((rng.uniform(0.0, math.pi), offset))
        layout["roads"] = roads
    return layout


def _render(layout: Dict[str, object], extent: float, grid_size: int) -> np.ndarray:
    coords = (np.arange(grid_size) + 0.5) / grid_size * 2.0 * extent - extent
    x, y = np.meshgrid(coords, coords)  # rows are y
    img = np.full((grid_size, grid_size), float(layout["level"]))
    for freq, angle, phase in layout["waves"]:  # type: ignore[attr-defined]
        img += BACKGROUND_AMPLITUDE * np.sin(
            2.0 * math.pi * freq * (x * math.cos(angle) + y * math.sin(angle)) + phase
        )
    for angle, offset in layout["roads"]:  # type: ignore[attr-defined]
        img += _segment_field(x, y, angle, offset, half_length=math.inf)
    if layout["motif"] is not None:
        for angle in layout["motif"]:  # type: ignore[attr-defined]
            img += _segment_field(x, y, angle, 0.0, SEGMENT_HALF_LENGTH)
        img += BUMP_AMPLITUDE * np.exp(-(x * x + y * y) / (2.0 * BUMP_SIGMA**2))
    return img


def render_scene(record: SampleRecord, spec: DatasetSpec) -> Scene:
    """Rebuild a scene's grids from its record."""
    rng = np.random.default_rng(record.seed)
    layout = _scene_layout(record.scene_kind, rng)
    scales = []
    for s in range(spec.num_scales):
        img = _render(layout, extent=0.5**s, grid_size=spec.grid_size)
        if spec.noise_level > 0:
            img = img + spec.noise_level * rng.standard_normal(img.shape)
        scales.append(img)
    return Scene(
        scales=scales,
        label=record.label,
        location=(record.lon, record.lat),
        seed=record.seed,
        sample_id=record.sample_id,
        scene_kind=record.scene_kind,
        split=record.split,
    )


def generate(spec: DatasetSpec) -> List[Scene]:
    """Render the full corpus described by `spec`; deterministic."""
    return [render_scene(r, spec) for r in build_records(spec)]


def crop_windows(scene: Scene, g: CropGeometry) -> List[np.ndarray]:
    """The same relative window cut from every scale."""
    windows = []
    for grid in scene.scales:
        if grid.shape != (g.source_size, g.source_size):
            raise StructuralError(
                f"crop geometry is for a {g.source_size}px source, grid is {grid.shape}"
            )
        windows.append(
            grid[g.offset_y : g.offset_y + g.crop_size, g.offset_x : g.offset_x + g.crop_size]
        )
    return windows


def pool_window(window: np.ndarray) -> np.ndarray:
    """(mean, max, std, mean |gradient|) on a 4x4 cell grid, flattened cell-major."""
    size = window.shape[0]
    if window.shape != (size, size) or size < MIN_WINDOW:
        raise StructuralError(f"window must be square and >= {MIN_WINDOW}px, got {window.shape}")
    edges = (np.arange(POOL_CELLS + 1) * size) // POOL_CELLS
    starts = edges[:-1]
    counts = np.outer(np.diff(edges), np.diff(edges)).astype(float)

    def cell_sum(values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(np.add.reduceat(values, starts, axis=0), starts, axis=1)

    means = cell_sum(window) / counts
    second = cell_sum(window * window) / counts
    stds = np.sqrt(np.maximum(second - means * means, 0.0))
    maxes = np.maximum.reduceat(np.maximum.reduceat(window, starts, axis=0), starts, axis=1)
    gy, gx = np.gradient(window)
    grads = cell_sum(0.5 * (np.abs(gx) + np.abs(gy))) / counts
    return np.stack([means, maxes, stds, grads], axis=-1).reshape(-1)


def pool_windows(windows: Sequence[np.ndarray]) -> np.ndarray:
    """Per-scale pooled features, shape (num_scales, 64)."""
    return np.stack([pool_window(w) for w in windows])


def crop_features(scene: Scene, g: CropGeometry) -> np.ndarray:
    """Pooled features of one crop at every scale."""
    return pool_windows(crop_windows(scene, g))


def full_features(scene: Scene) -> np.ndarray:
    """Features of the whole, uncropped scene (inference input)."""
    return crop_features(scene, CropGeometry.full(scene.grid_size))


def window_energy(grid: np.ndarray, g: CropGeometry) -> float:
    """Sum of squared deviations from the grid mean inside a window."""
    window = grid[g.offset_y : g.offset_y + g.crop_size, g.offset_x : g.offset_x + g.crop_size]
    return float(np.sum((window - grid.mean()) ** 2))


def write_dataset(
    spec: DatasetSpec, output_file: Union[str, Path], records: Optional[List[SampleRecord]] = None
) -> int:
    """Write the header and per-sample records; returns the sample count."""
    if records is None:
        records = build_records(spec)
    header = {"kind": "header", "format_version": DATASET_FORMAT, "spec": spec.model_dump(mode="json")}
    write_jsonl([header, *(r.to_dict() for r in records)], output_file)
    n_pos = sum(r.label for r in records)
    logger.info(f"Wrote {len(records)} samples ({n_pos} positive) to {output_file}")
    return len(records)


def read_dataset(jsonl_file: Union[str, Path]) -> Tuple[DatasetSpec, List[SampleRecord]]:
    """Parse a dataset file into its spec and records."""
    rows = read_jsonl(jsonl_file)
    if not rows or rows[0].get("kind") != "header":
        raise StructuralError(f"{jsonl_file}: first record must be the dataset header")
    if rows[0].get("format_version") != DATASET_FORMAT:
        raise StructuralError(f"{jsonl_file}: unsupported dataset format {rows[0].get('format_version')}")
    spec = DatasetSpec.model_validate(rows[0]["spec"])
    records = []
    for line_num, row in enumerate(rows[1:], 2):
        try:
            records.append(
                SampleRecord(
                    sample_id=int(row["sample_id"]),
                    label=int(row["label"]),
                    scene_kind=str(row["scene_kind"]),
                    seed=int(row["seed"]),
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    split=str(row["split"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise StructuralError(f"{jsonl_file} line {line_num}: bad sample record ({e})") from e
    return spec, records


def load_corpus(jsonl_file: Union[str, Path]) -> Corpus:
    """Read a dataset file and regenerate its grids."""
    spec, records = read_dataset(jsonl_file)
    scenes = [render_scene(r, spec) for r in records]
    logger.info(f"Loaded {len(scenes)} scenes from {jsonl_file}")
    return Corpus(spec=spec, scenes=scenes)
