"""
Performance, calibration and ensemble evaluation.

Every aggregate first puts the records into canonical order (by sample id),
so results are bit-identical under any permutation of the input. Risk
scores are thresholded with ``risk >= 0.5`` for binary decisions.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .betadist import BetaParams, credible_interval
from .config import EceConvention
from .errors import DomainError, StructuralError, UndefinedMetricError
from .jsonl_processor import write_csv, write_json

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
DEFAULT_BINS = 15


@dataclass(frozen=True)
class PredictionRecord:
    """One sample's prediction: Beta parameters, risk and uncertainty."""

    sample_id: int
    label: int
    risk: float
    alpha: float
    beta: float
    std_dev: float
    binary_pred: int
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    @classmethod
    def from_params(
        cls, sample_id: int, label: int, params: BetaParams, with_interval: bool = True
    ) -> "PredictionRecord":
        s = params.alpha + params.beta
        risk = params.alpha / s
        std = math.sqrt(params.alpha * params.beta / (s * s * (s + 1.0)))
        lo, hi = credible_interval(params) if with_interval else (None, None)
        return cls(
            sample_id=int(sample_id),
            label=int(label),
            risk=risk,
            alpha=params.alpha,
            beta=params.beta,
            std_dev=std,
            binary_pred=int(risk >= THRESHOLD),
            ci_low=lo,
            ci_high=hi,
        )


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class ClassificationResult:
    f1: float
    precision: float
    recall: float
    confusion: Confusion


@dataclass(frozen=True)
class ReliabilityBin:
    bin_low: float
    bin_high: float
    mean_risk: Optional[float]
    pos_rate: Optional[float]
    count: int


@dataclass
class EnsembleBlock:
    """Spread of the member predictions."""

    n_members: int
    mean_risk: List[float]
    sample_variance: List[float]
    disagreement: List[int]
    variance: float
    disagreement_rate: float
    sample_ids: List[int] = field(default_factory=list)


@dataclass
class EvalReport:
    """Aggregate performance and calibration of one model or ensemble."""

    n_samples: int
    f1: float
    precision: float
    recall: float
    accuracy: float
    auc: Optional[float]
    prc: Optional[float]
    ece: float
    mce: float
    brier: float
    confusion: Confusion
    reliability: List[ReliabilityBin]
    ece_bins: int = DEFAULT_BINS
    ece_convention: str = EceConvention.POSITIVE.value
    ensemble: Optional[EnsembleBlock] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def scalar_metrics(self) -> Dict[str, Any]:
        return {
            k: getattr(self, k)
            for k in ("f1", "precision", "recall", "accuracy", "auc", "prc", "ece", "mce", "brier")
        }


def _canonical(records: Sequence[PredictionRecord]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not records:
        raise DomainError("metrics need at least one record")
    ordered = sorted(records, key=lambda r: (r.sample_id, r.risk))
    labels = np.array([r.label for r in ordered], dtype=int)
    risks = np.array([r.risk for r in ordered], dtype=float)
    preds = np.array([r.binary_pred for r in ordered], dtype=int)
    return labels, risks, preds


def _classification(labels: np.ndarray, preds: np.ndarray) -> ClassificationResult:
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClassificationResult(f1, precision, recall, Confusion(tp, fp, tn, fn))


def _auc(labels: np.ndarray, risks: np.ndarray) -> float:
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    # Mann-Whitney with mid-ranks: each tied (pos, neg) pair counts one half
    ranks = rankdata(risks, method="average")
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _prc(labels: np.ndarray, risks: np.ndarray) -> float:
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PRC needs at least one positive")
    order = np.argsort(-risks, kind="stable")
    sorted_risks = risks[order]
    sorted_labels = labels[order]
    # last index of each group of tied scores
    group_ends = np.flatnonzero(np.r_[sorted_risks[1:] != sorted_risks[:-1], True])
    tps = np.cumsum(sorted_labels)[group_ends]
    totals = group_ends + 1
    precision = tps / totals
    recall = tps / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def _bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    return np.minimum((values * bins).astype(int), bins - 1)


def _calibration_inputs(
    labels: np.ndarray, risks: np.ndarray, preds: np.ndarray, convention: EceConvention
) -> Tuple[np.ndarray, np.ndarray]:
    if convention is EceConvention.MAX:
        confidence = np.maximum(risks, 1.0 - risks)
        correct = (preds == labels).astype(float)
        return confidence, correct
    return risks, labels.astype(float)


def _reliability(scores: np.ndarray, outcomes: np.ndarray, bins: int) -> List[ReliabilityBin]:
    idx = _bin_index(scores, bins)
    table = []
    for b in range(bins):
        mask = idx == b
        count = int(mask.sum())
        table.append(
            ReliabilityBin(
                bin_low=b / bins,
                bin_high=(b + 1) / bins,
                mean_risk=float(scores[mask].mean()) if count else None,
                pos_rate=float(outcomes[mask].mean()) if count else None,
                count=count,
            )
        )
    return table


def _ece_mce(scores: np.ndarray, outcomes: np.ndarray, bins: int) -> Tuple[float, float]:
    if bins < 1:
        raise DomainError(f"ECE needs at least one bin, got {bins}")
    total = scores.size
    ece = 0.0
    mce = 0.0
    for row in _reliability(scores, outcomes, bins):
        if row.count == 0:
            continue
        assert row.mean_risk is not None and row.pos_rate is not None
        gap = abs(row.mean_risk - row.pos_rate)
        ece += row.count / total * gap
        mce = max(mce, gap)
    return ece, mce


def classification_metrics(records: Sequence[PredictionRecord]) -> ClassificationResult:
    """Precision, recall, F1 and the confusion counts."""
    labels, _, preds = _canonical(records)
    return _classification(labels, preds)


def auc(records: Sequence[PredictionRecord]) -> float:
    """Area under the ROC curve; ties between classes count one half."""
    labels, risks, _ = _canonical(records)
    return _auc(labels, risks)


def prc(records: Sequence[PredictionRecord]) -> float:
    """Average precision over descending risk thresholds, ties as one group."""
    labels, risks, _ = _canonical(records)
    return _prc(labels, risks)


def ece(
    records: Sequence[PredictionRecord],
    bins: int = DEFAULT_BINS,
    convention: EceConvention = EceConvention.POSITIVE,
) -> float:
    """Count-weighted mean gap between mean score and outcome rate per bin."""
    labels, risks, preds = _canonical(records)
    scores, outcomes = _calibration_inputs(labels, risks, preds, convention)
    return _ece_mce(scores, outcomes, bins)[0]


def reliability_bins(
    records: Sequence[PredictionRecord], bins: int = DEFAULT_BINS
) -> List[ReliabilityBin]:
    labels, risks, _ = _canonical(records)
    return _reliability(risks, labels.astype(float), bins)


def brier(records: Sequence[PredictionRecord]) -> float:
    """Mean squared difference between risk and label."""
    labels, risks, _ = _canonical(records)
    return float(np.mean((risks - labels) ** 2))


def _report(
    labels: np.ndarray,
    risks: np.ndarray,
    preds: np.ndarray,
    bins: int,
    convention: EceConvention,
) -> EvalReport:
    cls = _classification(labels, preds)
    try:
        auc_value: Optional[float] = _auc(labels, risks)
    except UndefinedMetricError as e:
        logger.warning(f"AUC not reported: {e}")
        auc_value = None
    try:
        prc_value: Optional[float] = _prc(labels, risks)
    except UndefinedMetricError as e:
        logger.warning(f"PRC not reported: {e}")
        prc_value = None
    scores, outcomes = _calibration_inputs(labels, risks, preds, convention)
    ece_value, mce_value = _ece_mce(scores, outcomes, bins)
    return EvalReport(
        n_samples=int(labels.size),
        f1=cls.f1,
        precision=cls.precision,
        recall=cls.recall,
        accuracy=float(np.mean(preds == labels)),
        auc=auc_value,
        prc=prc_value,
        ece=ece_value,
        mce=mce_value,
        brier=float(np.mean((risks - labels) ** 2)),
        confusion=cls.confusion,
        reliability=_reliability(risks, labels.astype(float), bins),
        ece_bins=bins,
        ece_convention=convention.value,
    )


def evaluate(
    records: Sequence[PredictionRecord],
    bins: int = DEFAULT_BINS,
    convention: EceConvention = EceConvention.POSITIVE,
) -> EvalReport:
    """Full report for one model's predictions."""
    labels, risks, preds = _canonical(records)
    return _report(labels, risks, preds, bins, convention)


def accuracy(records: Sequence[PredictionRecord]) -> float:
    labels, _, preds = _canonical(records)
    return float(np.mean(preds == labels))


def ensemble_eval(
    member_records: Sequence[Sequence[PredictionRecord]],
    bins: int = DEFAULT_BINS,
    convention: EceConvention = EceConvention.POSITIVE,
) -> EvalReport:
    """Metrics of the mean member risk plus variance and disagreement."""
    if len(member_records) < 2:
        raise DomainError(f"an ensemble needs at least 2 members, got {len(member_records)}")

    members = [sorted(m, key=lambda r: r.sample_id) for m in member_records]
    ids = [r.sample_id for r in members[0]]
    if len(set(ids)) != len(ids):
        raise StructuralError("duplicate sample ids in ensemble member")
    for k, member in enumerate(members[1:], 2):
        if [r.sample_id for r in member] != ids:
            raise StructuralError(f"ensemble member {k} is not aligned with member 1")
        if [r.label for r in member] != [r.label for r in members[0]]:
            raise StructuralError(f"ensemble member {k} disagrees on labels")

    labels = np.array([r.label for r in members[0]], dtype=int)
    risks = np.array([[r.risk for r in m] for m in members])
    binaries = np.array([[r.binary_pred for r in m] for m in members])

    # first member plus mean offset: identical members reproduce it bit for bit
    mean_risk = risks[0] + np.mean(risks - risks[0], axis=0)
    sample_var = np.mean((risks - mean_risk) ** 2, axis=0)
    disagreement = (binaries.min(axis=0) != binaries.max(axis=0)).astype(int)

    preds = (mean_risk >= THRESHOLD).astype(int)
    report = _report(labels, mean_risk, preds, bins, convention)
    report.ensemble = EnsembleBlock(
        n_members=len(members),
        mean_risk=mean_risk.tolist(),
        sample_variance=sample_var.tolist(),
        disagreement=disagreement.tolist(),
        variance=float(np.mean(sample_var)),
        disagreement_rate=float(np.mean(disagreement)),
        sample_ids=ids,
    )
    return report


def write_report(report: EvalReport, output_file: Union[str, Path]) -> None:
    write_json(report.to_dict(), output_file)
    logger.info(f"Wrote report to {output_file}")


def reliability_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        [asdict(b) for b in report.reliability],
        columns=["bin_low", "bin_high", "mean_risk", "pos_rate", "count"],
    )


def write_reliability_csv(report: EvalReport, output_file: Union[str, Path]) -> None:
    write_csv(reliability_frame(report), output_file)


def predictions_frame(records: Sequence[PredictionRecord]) -> pd.DataFrame:
    ordered = sorted(records, key=lambda r: r.sample_id)
    return pd.DataFrame(
        {
            "id": [r.sample_id for r in ordered],
            "label": [r.label for r in ordered],
            "alpha": [r.alpha for r in ordered],
            "beta": [r.beta for r in ordered],
            "risk": [r.risk for r in ordered],
            "std_dev": [r.std_dev for r in ordered],
            "binary": [r.binary_pred for r in ordered],
            "ci_low": [r.ci_low for r in ordered],
            "ci_high": [r.ci_high for r in ordered],
        }
    )


def write_predictions_csv(records: Sequence[PredictionRecord], output_file: Union[str, Path]) -> None:
    write_csv(predictions_frame(records), output_file)
