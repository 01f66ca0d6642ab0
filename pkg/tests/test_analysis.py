"""Tests for the W2 surrogate sweep and the loss-weight ablation."""

import numpy as np
import pytest

from beta_risk.analysis import (
    ABLATION_COLUMNS,
    ABLATION_WEIGHTS,
    DEFAULT_GRID,
    DEFAULT_TARGET,
    SWEEP_COLUMNS,
    AblationRow,
    ablation_frame,
    ablation_markdown,
    parse_grid,
    parse_target,
    run_ablation,
    sweep_matrix,
    sweep_summary,
    w2_sweep,
    write_ablation,
    write_sweep_csv,
)
from beta_risk.betadist import BetaParams
from beta_risk.config import TrainConfig
from beta_risk.errors import DomainError
from beta_risk.loss import w2_surrogate


def test_default_grid_has_39_values():
    values = parse_grid(DEFAULT_GRID)
    assert len(values) == 39
    assert values[0] == 0.5 and values[-1] == 10.0
    assert 2.0 in values and 5.0 in values


@pytest.mark.parametrize("text", ["1:2:0", "1:2:-0.5", "1:2", "a:b:c", "0:2:1", "3:2:1"])
def test_bad_grid_rejected(text):
    with pytest.raises(DomainError):
        parse_grid(text)


def test_parse_target():
    assert parse_target("2,5") == BetaParams(2.0, 5.0)
    with pytest.raises(DomainError):
        parse_target("2")
    with pytest.raises(DomainError):
        parse_target("0,5")


def test_sweep_identity_cell_and_flags():
    frame = w2_sweep(DEFAULT_TARGET, [0.5, 2.0], [5.0, 6.0], nodes=256)
    assert list(frame.columns) == SWEEP_COLUMNS
    assert len(frame) == 4
    # alpha-major order
    assert list(frame["alpha"]) == [0.5, 0.5, 2.0, 2.0]

    same = frame[(frame["alpha"] == 2.0) & (frame["beta"] == 5.0)].iloc[0]
    assert same["surrogate"] == 0.0
    assert same["abs_diff"] <= 1e-10
    assert same["rel_diff"] == 0.0
    assert list(frame["extreme"]) == [True, True, False, False]


def test_sweep_surrogate_matches_scalar_loss():
    frame = w2_sweep(DEFAULT_TARGET, [1.5, 3.0], [4.5], nodes=256)
    for _, row in frame.iterrows():
        expected = w2_surrogate(BetaParams(row["alpha"], row["beta"]), DEFAULT_TARGET)
        assert row["surrogate"] == pytest.approx(expected, rel=1e-12)
        assert row["rel_diff"] == pytest.approx(row["abs_diff"] / row["true_w2"])


def test_sweep_empty_grid_rejected():
    with pytest.raises(DomainError):
        w2_sweep(DEFAULT_TARGET, [], [1.0])


def test_sweep_matrix_and_summary(tmp_path):
    frame = w2_sweep(DEFAULT_TARGET, [1.0, 2.0, 3.0], [4.0, 5.0], nodes=256)
    alphas, betas, values = sweep_matrix(frame, "abs_diff")
    np.testing.assert_array_equal(alphas, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(betas, [4.0, 5.0])
    assert values.shape == (3, 2)
    assert values[1, 1] == frame["abs_diff"].iloc[3]

    summary = sweep_summary(frame)
    assert summary["cells"] == 6
    assert summary["max_abs_diff"] >= summary["p95_abs_diff"] >= summary["median_abs_diff"]

    write_sweep_csv(frame, tmp_path / "sweep.csv")
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)


def rows():
    return [
        AblationRow(lambda1=10.0, lambda2=1.0, f1=0.5, precision=0.25, recall=1.0),
        AblationRow(lambda1=1.0, lambda2=5.0, f1=2 / 3, precision=0.5, recall=1.0),
    ]


def test_ablation_markdown():
    text = ablation_markdown(rows())
    lines = text.splitlines()
    assert lines[0] == "| lambda1 | lambda2 | F1 | Precision | Recall |"
    assert lines[2] == "| 10 | 1 | 0.5000 | 0.2500 | 1.0000 |"
    assert lines[3] == "| 1 | 5 | 0.6667 | 0.5000 | 1.0000 |"
    assert text.endswith("\n")


def test_ablation_frame_and_files(tmp_path):
    frame = ablation_frame(rows())
    assert list(frame.columns) == ABLATION_COLUMNS
    assert frame["f1"].tolist() == [0.5, 2 / 3]
    write_ablation(rows(), tmp_path / "ablation.csv", tmp_path / "ablation.md")
    assert (tmp_path / "ablation.md").read_text() == ablation_markdown(rows())
    assert (tmp_path / "ablation.csv").read_text().startswith("lambda1,lambda2,f1")


def test_run_ablation_on_small_corpus(small_corpus, small_model):
    config = TrainConfig(epochs=1, batch_size=8)
    result = run_ablation(
        small_corpus.split("train"),
        small_corpus.split("val"),
        small_corpus.split("test"),
        small_model,
        config,
        weights=[(1.0, 1.0), (5.0, 1.0)],
    )
    assert [(r.lambda1, r.lambda2) for r in result] == [(1.0, 1.0), (5.0, 1.0)]
    for r in result:
        assert 0.0 <= r.f1 <= 1.0
        assert len(r.val_precision) == len(r.val_recall) == 1


def test_ablation_table_is_deterministic(small_corpus, small_model):
    config = TrainConfig(epochs=1, batch_size=8)
    splits = [small_corpus.split(name) for name in ("train", "val", "test")]
    first = run_ablation(*splits, small_model, config)
    second = run_ablation(*splits, small_model, config)
    assert [(r.lambda1, r.lambda2) for r in first] == list(ABLATION_WEIGHTS)
    assert first == second
    assert ablation_markdown(first) == ablation_markdown(second)
    assert len(ablation_markdown(first).splitlines()) == 2 + len(ABLATION_WEIGHTS)


@pytest.mark.slow
def test_default_sweep_error_scale():
    values = parse_grid(DEFAULT_GRID)
    frame = w2_sweep(DEFAULT_TARGET, values, values)
    summary = sweep_summary(frame)
    assert summary["cells"] == 39 * 39
    assert 1e-4 <= summary["median_abs_diff"] <= 5e-2
    assert summary["p95_abs_diff"] <= 1e-1
    same = frame[(frame["alpha"] == 2.0) & (frame["beta"] == 5.0)].iloc[0]
    assert same["abs_diff"] <= 1e-10
    # relative error grows towards the small-shape edges of the grid
    extreme = frame[frame["extreme"]]["rel_diff"]
    assert extreme.mean() > frame[~frame["extreme"]]["rel_diff"].mean()
