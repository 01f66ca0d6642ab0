"""
Training loop: crop sampling, augmentation, AdamW and warm restarts.

Each epoch draws its randomness from ``default_rng([seed, epoch])`` so a run
is reproducible epoch by epoch. Positive scenes get a fresh random crop
every epoch, and the crop geometry decides their Beta target. Negatives
always get the fixed negative target.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from . import metrics
from .betadist import BetaParams
from .config import ModelConfig, ScheduleConfig, TrainConfig
from .errors import ConfigError, TrainingError
from .jsonl_processor import append_jsonl, ensure_dir, write_text
from .labelgen import CropGeometry, make_target
from .metrics import PredictionRecord
from .net import (
    GROUPS,
    AdamMoments,
    ModelState,
    ParamGroups,
    backward_batch,
    forward_batch,
    init,
    predict_risk,
    save_checkpoint,
)
from .synthdata import MIN_WINDOW, Scene, crop_features, crop_windows, full_features, pool_windows

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
BEST_CHECKPOINT = "best.ckpt.json"
FINAL_CHECKPOINT = "final.ckpt.json"


@dataclass
class EpochStats:
    """One line of metrics.jsonl."""

    epoch: int
    train_loss: float
    train_bce: float
    train_w2: float
    val_accuracy: float
    val_f1: float
    val_precision: float
    val_recall: float
    lr_backbone: float
    lr_dist_head: float
    lr_cls_head: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class FitResult:
    """Selected and last states of a run, plus its per-epoch history."""

    best_state: ModelState
    final_state: ModelState
    history: List[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def lr_at(base_lr: float, epoch_index: int, schedule: ScheduleConfig) -> float:
    """Cosine-annealed rate with warm restarts; `epoch_index` counts from 0."""
    if epoch_index < 0:
        raise ConfigError(f"epoch index must be >= 0, got {epoch_index}")
    start, length = 0, schedule.T0
    while epoch_index >= start + length:
        start += length
        length *= schedule.Tmult
    t_cur = epoch_index - start
    return schedule.eta_min + (base_lr - schedule.eta_min) * 0.5 * (
        1.0 + math.cos(math.pi * t_cur / length)
    )


def epoch_learning_rates(config: TrainConfig, epoch_index: int) -> Dict[str, float]:
    return {
        group: lr_at(base, epoch_index, config.schedule)
        for group, base in config.group_learning_rates().items()
    }


def nonfinite_gradient(grads: ParamGroups) -> Optional[Tuple[str, str]]:
    """(group, name) of the first gradient holding a NaN or inf, else None."""
    for group in GROUPS:
        for name, g in grads[group].items():
            if not np.all(np.isfinite(g)):
                return group, name
    return None


def optimizer_step(
    state: ModelState,
    grads: ParamGroups,
    learning_rates: Dict[str, float],
    config: TrainConfig,
) -> ModelState:
    """One AdamW update with decoupled weight decay, in place.

    theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    bad = nonfinite_gradient(grads)
    if bad is not None:
        group, name = bad
        raise TrainingError(f"non-finite gradient for {name}", group=group)

    if state.optimizer is None:
        state.optimizer = AdamMoments.zeros_like(state.params)
    opt = state.optimizer
    opt.step += 1
    b1, b2 = config.adam_betas
    bias1 = 1.0 - b1**opt.step
    bias2 = 1.0 - b2**opt.step

    for group in GROUPS:
        lr = learning_rates[group]
        for name, theta in state.params[group].items():
            g = grads[group][name]
            m = opt.m[group][name]
            v = opt.v[group][name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)
            theta -= lr * (update + config.weight_decay * theta)
    return state


def sample_crop(rng: np.random.Generator, source_size: int, area_range: Tuple[float, float]) -> CropGeometry:
    """Square crop with area fraction uniform in `area_range`, uniform position.

    The side never drops below MIN_WINDOW pixels, the smallest window the
    pooling stage accepts, so tiny area fractions give an 8px crop.
    """
    area = rng.uniform(area_range[0], area_range[1])
    side = int(round(math.sqrt(area) * source_size))
    side = min(max(side, MIN_WINDOW), source_size)
    limit = source_size - side
    offset_x = int(rng.integers(0, limit + 1))
    offset_y = int(rng.integers(0, limit + 1))
    return CropGeometry(source_size, side, offset_x, offset_y)


def augment(
    windows: Sequence[np.ndarray], rng: np.random.Generator, config: TrainConfig
) -> List[np.ndarray]:
    """Flips, quarter turns and brightness/contrast jitter, shared by all scales.

    The draws are made even when a transform is disabled, so toggling one
    does not shift the random stream of the others.
    """
    flip_h, flip_v = rng.random(2) < 0.5
    k = int(rng.integers(-1, 2))
    brightness, contrast = rng.uniform(0.0, 1.0, size=2)
    out = []
    for w in windows:
        if config.flips:
            if flip_h:
                w = w[:, ::-1]
            if flip_v:
                w = w[::-1, :]
            w = np.rot90(w, k)
        if config.jitter_range is not None:
            lo, hi = config.jitter_range
            b = lo + (hi - lo) * brightness
            c = lo + (hi - lo) * contrast
            mu = w.mean()
            w = (mu + c * (w - mu)) * b
        out.append(np.ascontiguousarray(w))
    return out


def _check_scenes(scenes: Sequence[Scene], name: str) -> None:
    if not scenes:
        raise ConfigError(f"{name} split is empty")


def _epoch_examples(
    scenes: Sequence[Scene], config: TrainConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Features, targets and labels for one pass, in a fresh random order."""
    order = rng.permutation(len(scenes))
    feats, t_alpha, t_beta, labels = [], [], [], []
    for idx in order:
        scene = scenes[idx]
        g = sample_crop(rng, scene.grid_size, config.crop_area_range)
        windows = augment(crop_windows(scene, g), rng, config)
        feats.append(pool_windows(windows))
        target = make_target(scene.label, g, config.label)
        t_alpha.append(target.alpha)
        t_beta.append(target.beta)
        labels.append(scene.label)
    return (
        np.stack(feats),
        np.array(t_alpha),
        np.array(t_beta),
        np.array(labels, dtype=int),
        order,
    )


def _first_nonfinite(state: ModelState, features: np.ndarray) -> int:
    cache = forward_batch(state, features)
    bad = ~(np.isfinite(cache.alpha) & np.isfinite(cache.beta) & np.isfinite(cache.logits))
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else 0


def _first_bad_gradient(
    state: ModelState,
    features: np.ndarray,
    t_alpha: np.ndarray,
    t_beta: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> int:
    for i in range(features.shape[0]):
        sl = slice(i, i + 1)
        grads, _ = backward_batch(state, features[sl], t_alpha[sl], t_beta[sl], labels[sl], config.loss)
        if nonfinite_gradient(grads) is not None:
            return i
    return 0


def train_epoch(
    state: ModelState,
    scenes: Sequence[Scene],
    epoch_index: int,
    config: TrainConfig,
    rng: np.random.Generator,
    progress: bool = False,
) -> Tuple[ModelState, Dict[str, float]]:
    """One pass over `scenes` in mini-batches; returns the state and mean losses."""
    _check_scenes(scenes, "train")
    features, t_alpha, t_beta, labels, order = _epoch_examples(scenes, config, rng)
    learning_rates = epoch_learning_rates(config, epoch_index)

    n = len(scenes)
    sums = {"loss": 0.0, "bce": 0.0, "w2": 0.0}
    starts = range(0, n, config.batch_size)
    for start in tqdm(starts, desc=f"Epoch {epoch_index + 1}", disable=not progress, leave=False):
        sl = slice(start, start + config.batch_size)
        grads, loss = backward_batch(
            state, features[sl], t_alpha[sl], t_beta[sl], labels[sl], config.loss
        )
        if not math.isfinite(loss.total):
            bad = _first_nonfinite(state, features[sl])
            sample_id = scenes[order[start + bad]].sample_id
            raise TrainingError(
                f"non-finite loss in epoch {epoch_index + 1}", sample_index=sample_id
            )
        bad_grad = nonfinite_gradient(grads)
        if bad_grad is not None:
            bad = _first_bad_gradient(
                state, features[sl], t_alpha[sl], t_beta[sl], labels[sl], config
            )
            group, name = bad_grad
            raise TrainingError(
                f"non-finite gradient for {name} in epoch {epoch_index + 1}",
                group=group,
                sample_index=scenes[order[start + bad]].sample_id,
            )
        optimizer_step(state, grads, learning_rates, config)
        size = features[sl].shape[0]
        sums["loss"] += loss.total * size
        sums["bce"] += loss.bce * size
        sums["w2"] += loss.w2 * size

    stats = {k: v / n for k, v in sums.items()}
    stats.update({f"lr_{g}": lr for g, lr in learning_rates.items()})
    return state, stats


def predict_dataset(
    state: ModelState, scenes: Sequence[Scene], with_interval: bool = True
) -> List[PredictionRecord]:
    """Predictions on whole scenes, one record per scene."""
    if not scenes:
        return []
    features = np.stack([full_features(s) for s in scenes])
    return predict_features(state, scenes, features, with_interval)


def predict_features(
    state: ModelState,
    scenes: Sequence[Scene],
    features: np.ndarray,
    with_interval: bool = True,
) -> List[PredictionRecord]:
    cache = forward_batch(state, features)
    return [
        PredictionRecord.from_params(
            s.sample_id, s.label, BetaParams(a, b), with_interval=with_interval
        )
        for s, a, b in zip(scenes, cache.alpha, cache.beta)
    ]


def predict_on_crop(
    state: ModelState, scene: Scene, g: CropGeometry
) -> Tuple[float, BetaParams, float]:
    """Risk, Beta and std for one crop of a scene."""
    return predict_risk(state, crop_features(scene, g))


def fit(
    train: Sequence[Scene],
    val: Sequence[Scene],
    model_config: ModelConfig,
    config: TrainConfig,
    run_dir: Optional[Union[str, Path]] = None,
    data_seed: Optional[int] = None,
    progress: bool = False,
) -> FitResult:
    """Train for `config.epochs` and keep the best-validation-accuracy state.

    Ties keep the earliest epoch. With zero epochs the initial state is
    returned as both best and final.
    """
    _check_scenes(train, "train")
    _check_scenes(val, "validation")
    overlap = {s.sample_id for s in train} & {s.sample_id for s in val}
    if overlap:
        raise ConfigError(f"train and validation share {len(overlap)} sample ids")

    state = init(model_config, seed=config.seed)
    state.optimizer = AdamMoments.zeros_like(state.params)
    state.data_seed = data_seed
    best = state.copy()
    best_accuracy = -1.0
    best_epoch = 0
    history: List[EpochStats] = []

    out_dir = ensure_dir(run_dir) if run_dir is not None else None
    if out_dir is not None:
        write_text("", out_dir / METRICS_FILE)

    val_features = np.stack([full_features(s) for s in val])
    logger.info(
        f"Training {state.num_parameters()} parameters on {len(train)} scenes "
        f"for {config.epochs} epochs"
    )
    for epoch_index in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch_index])
        state, stats = train_epoch(state, train, epoch_index, config, rng, progress=progress)
        state.epoch = epoch_index + 1

        records = predict_features(state, val, val_features, with_interval=False)
        cls = metrics.classification_metrics(records)
        val_accuracy = metrics.accuracy(records)
        row = EpochStats(
            epoch=epoch_index + 1,
            train_loss=stats["loss"],
            train_bce=stats["bce"],
            train_w2=stats["w2"],
            val_accuracy=val_accuracy,
            val_f1=cls.f1,
            val_precision=cls.precision,
            val_recall=cls.recall,
            lr_backbone=stats["lr_backbone"],
            lr_dist_head=stats["lr_dist_head"],
            lr_cls_head=stats["lr_cls_head"],
        )
        history.append(row)
        if out_dir is not None:
            append_jsonl(row.to_dict(), out_dir / METRICS_FILE)
        logger.info(
            f"Epoch {row.epoch}: loss {row.train_loss:.5f} "
            f"val acc {row.val_accuracy:.4f} f1 {row.val_f1:.4f}"
        )
        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best = state.copy()
            best_epoch = row.epoch

    if out_dir is not None:
        save_checkpoint(best, out_dir / BEST_CHECKPOINT)
        save_checkpoint(state, out_dir / FINAL_CHECKPOINT)
    if history:
        logger.info(f"Best validation accuracy {best_accuracy:.4f} at epoch {best_epoch}")
    return FitResult(best_state=best, final_state=state, history=history, best_epoch=best_epoch)
