"""
SVG figures for sweeps, risk maps, evaluation and ablation.

All figures go through :func:`save_svg`, which fixes the SVG id salt and
drops the date stamp so repeated runs produce identical files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .analysis import AblationRow, sweep_matrix  # noqa: E402
from .betadist import BetaParams, pdf  # noqa: E402
from .errors import DataIOError  # noqa: E402
from .jsonl_processor import ensure_dir  # noqa: E402
from .metrics import EvalReport, PredictionRecord  # noqa: E402

logger = logging.getLogger(__name__)

SVG_SALT = "beta-risk"
DENSITY_POINTS = 400

plt.rcParams["svg.hashsalt"] = SVG_SALT


def save_svg(fig: plt.Figure, output_file: Union[str, Path]) -> None:
    output_path = Path(output_file)
    try:
        fig.savefig(output_path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise DataIOError(output_path, f"cannot write SVG: {e}") from e
    finally:
        plt.close(fig)
    logger.debug(f"Wrote {output_path}")


def sweep_heatmap(
    frame: pd.DataFrame, column: str, title: str, output_file: Union[str, Path]
) -> None:
    """Heatmap of one sweep column over the (alpha, beta) grid."""
    alphas, betas, values = sweep_matrix(frame, column)
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.imshow(
        values,
        origin="lower",
        aspect="auto",
        extent=(betas[0], betas[-1], alphas[0], alphas[-1]),
        cmap="viridis",
    )
    fig.colorbar(mesh, ax=ax, label=column)
    ax.set_xlabel("beta")
    ax.set_ylabel("alpha")
    ax.set_title(title)
    save_svg(fig, output_file)


def w2_heatmaps(frame: pd.DataFrame, out_dir: Union[str, Path]) -> List[Path]:
    """Absolute and relative surrogate error panels."""
    out = Path(out_dir)
    paths = [out / "w2_abs_diff.svg", out / "w2_rel_diff.svg"]
    sweep_heatmap(frame, "abs_diff", "|surrogate - W2|", paths[0])
    sweep_heatmap(frame, "rel_diff", "|surrogate - W2| / W2", paths[1])
    return paths


def risk_map(
    records: Sequence[PredictionRecord],
    locations: Dict[int, tuple],
    output_file: Union[str, Path],
) -> None:
    """Points colored by risk; labelled positives drawn as diamonds on top."""
    ordered = sorted(records, key=lambda r: r.sample_id)
    lon = np.array([locations[r.sample_id][0] for r in ordered])
    lat = np.array([locations[r.sample_id][1] for r in ordered])
    risk = np.array([r.risk for r in ordered])
    positive = np.array([r.label == 1 for r in ordered])

    fig, ax = plt.subplots(figsize=(6, 5))
    points = ax.scatter(lon, lat, c=risk, cmap="inferno", vmin=0.0, vmax=1.0, s=14)
    if positive.any():
        ax.scatter(
            lon[positive],
            lat[positive],
            marker="D",
            facecolors="none",
            edgecolors="cyan",
            s=40,
            label="fatal crash",
        )
        ax.legend(loc="upper right")
    fig.colorbar(points, ax=ax, label="risk")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    save_svg(fig, output_file)


def risk_histogram(records: Sequence[PredictionRecord], output_file: Union[str, Path]) -> None:
    risk = np.array([r.risk for r in sorted(records, key=lambda r: r.sample_id)])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(risk, bins=20, range=(0.0, 1.0), color="steelblue", edgecolor="white")
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("predicted risk")
    ax.set_ylabel("count")
    save_svg(fig, output_file)


def reliability_diagram(report: EvalReport, output_file: Union[str, Path]) -> None:
    filled = [b for b in report.reliability if b.count > 0]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0.0, 1.0], [0.0, 1.0], linestyle="--", color="grey")
    ax.bar(
        [0.5 * (b.bin_low + b.bin_high) for b in filled],
        [b.pos_rate for b in filled],
        width=[b.bin_high - b.bin_low for b in filled],
        edgecolor="black",
        alpha=0.7,
    )
    ax.plot([b.mean_risk for b in filled], [b.pos_rate for b in filled], marker="o", color="crimson")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("mean predicted risk")
    ax.set_ylabel("observed positive rate")
    ax.set_title(f"ECE {report.ece:.4f}")
    save_svg(fig, output_file)


def uncertainty_scatter(records: Sequence[PredictionRecord], output_file: Union[str, Path]) -> None:
    ordered = sorted(records, key=lambda r: r.sample_id)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, color in ((0, "tab:blue"), (1, "tab:red")):
        subset = [r for r in ordered if r.label == label]
        ax.scatter(
            [r.risk for r in subset],
            [r.std_dev for r in subset],
            s=10,
            color=color,
            label=f"label {label}",
        )
    ax.set_xlabel("risk")
    ax.set_ylabel("std dev")
    ax.legend()
    save_svg(fig, output_file)


def representative_outcomes(
    records: Sequence[PredictionRecord],
) -> Dict[str, Optional[PredictionRecord]]:
    """Lowest-id record of each confusion cell (TP, TN, FP, FN)."""
    picks: Dict[str, Optional[PredictionRecord]] = {"TP": None, "TN": None, "FP": None, "FN": None}
    for r in sorted(records, key=lambda r: r.sample_id):
        key = ("T" if r.binary_pred == r.label else "F") + ("P" if r.binary_pred else "N")
        if picks[key] is None:
            picks[key] = r
    return picks


def density_panels(records: Sequence[PredictionRecord], output_file: Union[str, Path]) -> None:
    """Predicted Beta densities for one TP, TN, FP and FN."""
    x = np.linspace(0.0, 1.0, DENSITY_POINTS + 2)[1:-1]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), sharex=True)
    for ax, (name, record) in zip(axes.ravel(), representative_outcomes(records).items()):
        ax.set_title(name)
        if record is None:
            ax.text(0.5, 0.5, "none", ha="center", va="center", transform=ax.transAxes)
            continue
        density = pdf(BetaParams(record.alpha, record.beta), x)
        ax.plot(x, density, color="darkgreen")
        ax.axvline(record.risk, linestyle=":", color="black")
        ax.set_title(f"{name} (id {record.sample_id})")
    save_svg(fig, output_file)


def eval_plots(
    records: Sequence[PredictionRecord], report: EvalReport, out_dir: Union[str, Path]
) -> List[Path]:
    out = ensure_dir(out_dir)
    paths = {
        "risk_histogram.svg": risk_histogram,
        "uncertainty_vs_risk.svg": uncertainty_scatter,
        "beta_densities.svg": density_panels,
    }
    written = []
    for name, draw in paths.items():
        draw(records, out / name)
        written.append(out / name)
    reliability_diagram(report, out / "reliability.svg")
    written.append(out / "reliability.svg")
    return written


def ablation_boxplots(rows: Sequence[AblationRow], output_file: Union[str, Path]) -> None:
    """Per-epoch validation precision and recall for each weight pair."""
    labels = [f"({r.lambda1:g}, {r.lambda2:g})" for r in rows]
    fig, (ax_p, ax_r) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    ax_p.boxplot([r.val_precision or [0.0] for r in rows])
    ax_p.set_xticks(range(1, len(rows) + 1), labels)
    ax_p.set_title("validation precision")
    ax_r.boxplot([r.val_recall or [0.0] for r in rows])
    ax_r.set_xticks(range(1, len(rows) + 1), labels)
    ax_r.set_title("validation recall")
    for ax in (ax_p, ax_r):
        ax.set_xlabel("(lambda1, lambda2)")
    save_svg(fig, output_file)
