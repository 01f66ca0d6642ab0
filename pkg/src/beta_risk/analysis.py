"""
Offline studies: the W2 surrogate error sweep and the loss-weight ablation.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import metrics
from .betadist import BetaParams
from .config import ModelConfig, TrainConfig
from .errors import DomainError
from .jsonl_processor import write_csv, write_text
from .loss import DEFAULT_NODES, moments_with_grad, w2_true_batch
from .synthdata import Scene
from .trainer import fit, predict_dataset

logger = logging.getLogger(__name__)

DEFAULT_TARGET = BetaParams(2.0, 5.0)
DEFAULT_GRID = "0.5:10:0.25"
ABLATION_WEIGHTS: Tuple[Tuple[float, float], ...] = (
    (10.0, 1.0),
    (5.0, 1.0),
    (1.0, 1.0),
    (1.0, 5.0),
    (1.0, 10.0),
)
SWEEP_COLUMNS = ["alpha", "beta", "surrogate", "true_w2", "abs_diff", "rel_diff", "extreme"]
ABLATION_COLUMNS = ["lambda1", "lambda2", "f1", "precision", "recall"]
REL_FLOOR = 1e-10


def parse_grid(text: str) -> np.ndarray:
    """Parse ``start:stop:step`` into an inclusive grid of values."""
    parts = text.split(":")
    if len(parts) != 3:
        raise DomainError(f"grid must look like start:stop:step, got '{text}'")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as e:
        raise DomainError(f"grid must be numeric, got '{text}'") from e
    if step <= 0:
        raise DomainError(f"grid step must be > 0, got {step}")
    if start <= 0 or stop < start:
        raise DomainError(f"grid needs 0 < start <= stop, got {start}:{stop}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    # round away accumulated error so grid points land on their decimal values
    return np.round(start + step * np.arange(count), 12)


def parse_target(text: str) -> BetaParams:
    """Parse ``alpha,beta``."""
    parts = text.split(",")
    if len(parts) != 2:
        raise DomainError(f"target must look like alpha,beta, got '{text}'")
    try:
        return BetaParams(float(parts[0]), float(parts[1]))
    except ValueError as e:
        raise DomainError(f"bad target '{text}': {e}") from e


def w2_sweep(
    target: BetaParams,
    alphas: Sequence[float],
    betas: Sequence[float],
    nodes: int = DEFAULT_NODES,
    progress: bool = False,
) -> pd.DataFrame:
    """Surrogate and quadrature W2 to `target` for every (alpha, beta) cell.

    Rows are alpha-major. ``rel_diff`` is abs_diff / true_w2, or 0 where the
    true distance is below 1e-10. ``extreme`` marks cells with a shape
    parameter under 1.
    """
    a_values = np.asarray(alphas, dtype=float)
    b_values = np.asarray(betas, dtype=float)
    if a_values.size == 0 or b_values.size == 0:
        raise DomainError("sweep grid is empty")

    mu_t, sig_t, *_ = moments_with_grad(np.array(target.alpha), np.array(target.beta))
    rows = []
    for a in tqdm(a_values, desc="W2 sweep", disable=not progress):
        a_col = np.full_like(b_values, a)
        true_w2 = w2_true_batch(a_col, b_values, target, nodes)
        mu_p, sig_p, *_ = moments_with_grad(a_col, b_values)
        surrogate = (mu_p - mu_t) ** 2 + (sig_p - sig_t) ** 2
        abs_diff = np.abs(surrogate - true_w2)
        safe = np.where(true_w2 > REL_FLOOR, true_w2, 1.0)
        rel_diff = np.where(true_w2 > REL_FLOOR, abs_diff / safe, 0.0)
        rows.append(
            pd.DataFrame(
                {
                    "alpha": a_col,
                    "beta": b_values,
                    "surrogate": surrogate,
                    "true_w2": true_w2,
                    "abs_diff": abs_diff,
                    "rel_diff": rel_diff,
                    "extreme": np.minimum(a_col, b_values) < 1.0,
                }
            )
        )
    frame = pd.concat(rows, ignore_index=True)[SWEEP_COLUMNS]
    logger.info(
        f"W2 sweep over {len(frame)} cells: median |diff| {frame['abs_diff'].median():.3e}, "
        f"p95 {frame['abs_diff'].quantile(0.95):.3e}"
    )
    return frame


def sweep_summary(frame: pd.DataFrame) -> Dict[str, float]:
    return {
        "cells": int(len(frame)),
        "median_abs_diff": float(frame["abs_diff"].median()),
        "p95_abs_diff": float(frame["abs_diff"].quantile(0.95)),
        "max_abs_diff": float(frame["abs_diff"].max()),
        "max_rel_diff": float(frame["rel_diff"].max()),
    }


def sweep_matrix(frame: pd.DataFrame, column: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reshape one sweep column to (alphas, betas, values[alpha, beta])."""
    table = frame.pivot(index="alpha", columns="beta", values=column)
    return table.index.to_numpy(), table.columns.to_numpy(), table.to_numpy()


def write_sweep_csv(frame: pd.DataFrame, output_file: Union[str, Path]) -> None:
    write_csv(frame, output_file)


@dataclass
class AblationRow:
    """Test-split scores of one (lambda1, lambda2) setting and its validation history."""

    lambda1: float
    lambda2: float
    f1: float
    precision: float
    recall: float
    val_precision: List[float] = field(default_factory=list)
    val_recall: List[float] = field(default_factory=list)


def run_ablation(
    train: Sequence[Scene],
    val: Sequence[Scene],
    test: Sequence[Scene],
    model_config: ModelConfig,
    config: TrainConfig,
    weights: Sequence[Tuple[float, float]] = ABLATION_WEIGHTS,
    progress: bool = False,
) -> List[AblationRow]:
    """Train one model per weight pair with identical seeds and score each."""
    eval_scenes = test if test else val
    rows = []
    for lambda1, lambda2 in tqdm(weights, desc="Ablation", disable=not progress):
        loss = config.loss.model_copy(update={"lambda1": lambda1, "lambda2": lambda2})
        run_config = config.model_copy(update={"loss": loss})
        result = fit(train, val, model_config, run_config)
        cls = metrics.classification_metrics(predict_dataset(result.best_state, eval_scenes))
        rows.append(
            AblationRow(
                lambda1=lambda1,
                lambda2=lambda2,
                f1=cls.f1,
                precision=cls.precision,
                recall=cls.recall,
                val_precision=[h.val_precision for h in result.history],
                val_recall=[h.val_recall for h in result.history],
            )
        )
        logger.info(f"lambda1={lambda1:g} lambda2={lambda2:g}: F1 {cls.f1:.4f}")
    return rows


def ablation_frame(rows: Sequence[AblationRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.lambda1, r.lambda2, r.f1, r.precision, r.recall] for r in rows],
        columns=ABLATION_COLUMNS,
    )


def ablation_markdown(rows: Sequence[AblationRow], digits: int = 4) -> str:
    """The comparison table as a Markdown pipe table."""
    lines = [
        "| lambda1 | lambda2 | F1 | Precision | Recall |",
        "|---:|---:|---:|---:|---:|",
    ]
    for r in rows:
        lines.append(
            f"| {r.lambda1:g} | {r.lambda2:g} | {r.f1:.{digits}f} "
            f"| {r.precision:.{digits}f} | {r.recall:.{digits}f} |"
        )
    return "\n".join(lines) + "\n"


def write_ablation(
    rows: Sequence[AblationRow], csv_file: Union[str, Path], markdown_file: Optional[Union[str, Path]] = None
) -> None:
    write_csv(ablation_frame(rows), csv_file)
    if markdown_file is not None:
        write_text(ablation_markdown(rows), markdown_file)
