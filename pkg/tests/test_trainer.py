"""Tests for the schedule, AdamW, the epoch loop and model selection."""

import json
import math

import numpy as np
import pytest

from beta_risk import metrics, trainer
from beta_risk.config import DatasetSpec, LossWeights, ModelConfig, ScheduleConfig, TrainConfig
from beta_risk.errors import ConfigError, TrainingError
from beta_risk.labelgen import CropGeometry
from beta_risk.net import GROUPS, init, load_checkpoint
from beta_risk.synthdata import MIN_WINDOW, Corpus, generate
from beta_risk.trainer import (
    BEST_CHECKPOINT,
    FINAL_CHECKPOINT,
    METRICS_FILE,
    augment,
    fit,
    lr_at,
    optimizer_step,
    predict_dataset,
    predict_on_crop,
    sample_crop,
    train_epoch,
)


def scalar_state():
    state = init(ModelConfig(num_scales=1, feature_dim=1, encoder_widths=[1]), seed=0)
    for group in state.params.values():
        for arr in group.values():
            arr[...] = 1.0
    return state


def same_params(a, b):
    return all(
        np.array_equal(a.params[g][k], b.params[g][k]) for g in GROUPS for k in a.params[g]
    )


def test_lr_cycle_start_and_midpoint():
    s = ScheduleConfig(T0=10, Tmult=2)
    assert lr_at(0.02, 0, s) == pytest.approx(0.02)
    assert lr_at(0.02, 5, s) == pytest.approx(0.01)
    assert lr_at(0.02, 10, s) == pytest.approx(0.02)
    # second cycle is 20 epochs long: epoch 20 is its midpoint, 30 starts the third
    assert lr_at(0.02, 20, s) == pytest.approx(0.01)
    assert lr_at(0.02, 30, s) == pytest.approx(0.02)


def test_lr_eta_min_floor():
    s = ScheduleConfig(T0=4, Tmult=1, eta_min=0.001)
    values = [lr_at(0.01, e, s) for e in range(12)]
    assert min(values) >= 0.001
    assert values[0] == values[4] == values[8] == pytest.approx(0.01)


def test_lr_rejects_negative_epoch():
    with pytest.raises(ConfigError):
        lr_at(0.1, -1, ScheduleConfig())


def test_adamw_zero_gradients_no_decay():
    state = scalar_state()
    before = state.copy()
    grads = {g: {k: np.zeros_like(v) for k, v in state.params[g].items()} for g in GROUPS}
    config = TrainConfig(weight_decay=0.0)
    optimizer_step(state, grads, {g: 0.1 for g in GROUPS}, config)
    assert same_params(state, before)


def test_adamw_first_step():
    state = scalar_state()
    grads = {g: {k: np.ones_like(v) for k, v in state.params[g].items()} for g in GROUPS}
    config = TrainConfig(weight_decay=0.0)
    optimizer_step(state, grads, {g: 0.1 for g in GROUPS}, config)
    assert state.params["backbone"]["W0"][0, 0] == pytest.approx(0.9, abs=1e-7)
    assert state.optimizer.step == 1


def test_adamw_decoupled_decay():
    state = scalar_state()
    grads = {g: {k: np.zeros_like(v) for k, v in state.params[g].items()} for g in GROUPS}
    config = TrainConfig(weight_decay=0.01)
    optimizer_step(state, grads, {g: 0.1 for g in GROUPS}, config)
    assert state.params["cls_head"]["W0"][0, 0] == pytest.approx(1.0 - 0.1 * 0.01)


def test_adamw_per_group_rates():
    state = scalar_state()
    grads = {g: {k: np.ones_like(v) for k, v in state.params[g].items()} for g in GROUPS}
    rates = {"backbone": 0.0, "dist_head": 0.2, "cls_head": 0.0}
    optimizer_step(state, grads, rates, TrainConfig(weight_decay=0.0))
    assert state.params["backbone"]["W0"][0, 0] == 1.0
    assert state.params["dist_head"]["W0"][0, 0] == pytest.approx(0.8, abs=1e-7)


def test_non_finite_gradient_names_group():
    state = scalar_state()
    grads = {g: {k: np.zeros_like(v) for k, v in state.params[g].items()} for g in GROUPS}
    grads["dist_head"]["b0"][0] = np.nan
    with pytest.raises(TrainingError, match="dist_head"):
        optimizer_step(state, grads, {g: 0.1 for g in GROUPS}, TrainConfig())


def test_sample_crop_respects_area_range():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = sample_crop(rng, 64, (0.5, 1.0))
        assert 45 <= g.crop_size <= 64
        assert 0 <= g.offset_x <= 64 - g.crop_size


def test_sample_crop_keeps_poolable_side():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = sample_crop(rng, 32, (0.02, 0.05))
        assert g.crop_size >= MIN_WINDOW
        assert g.offset_x + g.crop_size <= 32


def test_train_epoch_with_tiny_crop_areas(small_corpus, small_model):
    config = TrainConfig(batch_size=8, crop_area_range=(0.02, 0.05))
    state = init(small_model, seed=0)
    _, stats = train_epoch(
        state, small_corpus.split("train"), 0, config, np.random.default_rng(0)
    )
    assert math.isfinite(stats["loss"])


def test_non_finite_gradient_names_sample(monkeypatch, small_corpus, small_model, quick_train):
    real_backward = trainer.backward_batch

    def poisoned(state, features, t_alpha, t_beta, labels, w):
        grads, loss = real_backward(state, features, t_alpha, t_beta, labels, w)
        if labels.any():
            grads["dist_head"]["b0"][...] = np.nan
        return grads, loss

    monkeypatch.setattr(trainer, "backward_batch", poisoned)
    train = small_corpus.split("train")
    with pytest.raises(TrainingError, match="sample") as info:
        train_epoch(init(small_model, seed=0), train, 0, quick_train, np.random.default_rng(0))
    assert info.value.group == "dist_head"
    assert info.value.sample_index in {s.sample_id for s in train if s.label == 1}


def test_augment_preserves_shape_and_is_seeded():
    windows = [np.arange(16.0).reshape(4, 4), np.ones((4, 4))]
    config = TrainConfig()
    a = augment(windows, np.random.default_rng(1), config)
    b = augment(windows, np.random.default_rng(1), config)
    for x, y in zip(a, b):
        assert x.shape == (4, 4)
        np.testing.assert_array_equal(x, y)


def test_augment_disabled_is_identity():
    windows = [np.arange(16.0).reshape(4, 4)]
    config = TrainConfig(flips=False, jitter_range=None)
    out = augment(windows, np.random.default_rng(3), config)
    np.testing.assert_array_equal(out[0], windows[0])


def test_train_epoch_is_deterministic(small_corpus, small_model, quick_train):
    train = small_corpus.split("train")
    a = init(small_model, seed=0)
    b = init(small_model, seed=0)
    train_epoch(a, train, 0, quick_train, np.random.default_rng([0, 0]))
    train_epoch(b, train, 0, quick_train, np.random.default_rng([0, 0]))
    assert same_params(a, b)


def test_train_epoch_zero_loss_weights_keeps_state(small_corpus, small_model):
    config = TrainConfig(
        batch_size=8, weight_decay=0.0, loss=LossWeights(lambda1=0.0, lambda2=0.0)
    )
    state = init(small_model, seed=0)
    before = state.copy()
    train_epoch(state, small_corpus.split("train"), 0, config, np.random.default_rng(0))
    assert same_params(state, before)


def test_train_epoch_reports_losses(small_corpus, small_model, quick_train):
    state = init(small_model, seed=0)
    _, stats = train_epoch(
        state, small_corpus.split("train"), 0, quick_train, np.random.default_rng(0)
    )
    assert stats["loss"] > 0
    assert stats["loss"] == pytest.approx(
        quick_train.loss.lambda1 * stats["bce"] + quick_train.loss.lambda2 * stats["w2"]
    )
    assert stats["lr_dist_head"] == quick_train.lr_dist_head


def test_fit_zero_epochs_returns_initial_state(small_corpus, small_model):
    config = TrainConfig(epochs=0)
    result = fit(small_corpus.split("train"), small_corpus.split("val"), small_model, config)
    assert result.history == []
    assert result.best_epoch == 0
    assert same_params(result.best_state, init(small_model, seed=config.seed))


def test_fit_rejects_empty_or_overlapping_splits(small_corpus, small_model, quick_train):
    train = small_corpus.split("train")
    with pytest.raises(ConfigError):
        fit(train, [], small_model, quick_train)
    with pytest.raises(ConfigError):
        fit(train, train[:2], small_model, quick_train)


def test_fit_writes_run_directory(tmp_path, small_corpus, small_model, quick_train):
    result = fit(
        small_corpus.split("train"),
        small_corpus.split("val"),
        small_model,
        quick_train,
        run_dir=tmp_path,
        data_seed=3,
    )
    assert len(result.history) == quick_train.epochs
    assert [h.epoch for h in result.history] == [1, 2]
    lines = (tmp_path / METRICS_FILE).read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [1, 2]
    best = load_checkpoint(tmp_path / BEST_CHECKPOINT)
    assert best.epoch == result.best_epoch
    assert best.data_seed == 3
    assert (tmp_path / FINAL_CHECKPOINT).exists()


def test_fit_selects_earliest_best_epoch(small_corpus, small_model, quick_train):
    result = fit(small_corpus.split("train"), small_corpus.split("val"), small_model, quick_train)
    accuracies = [h.val_accuracy for h in result.history]
    assert result.best_epoch == accuracies.index(max(accuracies)) + 1


def test_fit_is_reproducible(tmp_path, small_corpus, small_model, quick_train):
    args = (small_corpus.split("train"), small_corpus.split("val"), small_model, quick_train)
    fit(*args, run_dir=tmp_path / "a")
    fit(*args, run_dir=tmp_path / "b")
    a = (tmp_path / "a" / BEST_CHECKPOINT).read_bytes()
    b = (tmp_path / "b" / BEST_CHECKPOINT).read_bytes()
    assert a == b


def test_predictions_carry_intervals(small_corpus, small_model):
    state = init(small_model, seed=0)
    records = predict_dataset(state, small_corpus.split("val"))
    assert len(records) == len(small_corpus.split("val"))
    for r in records:
        assert r.risk == pytest.approx(r.alpha / (r.alpha + r.beta))
        assert 0.0 < r.ci_low < r.ci_high < 1.0
        assert r.binary_pred == int(r.risk >= 0.5)


def test_predict_on_crop(small_corpus, small_model):
    state = init(small_model, seed=0)
    scene = small_corpus.scenes[0]
    risk, params, std = predict_on_crop(state, scene, CropGeometry.centered(scene.grid_size, 16))
    assert 0.0 < risk < 1.0
    assert std == pytest.approx(
        math.sqrt(
            params.alpha
            * params.beta
            / ((params.alpha + params.beta) ** 2 * (params.alpha + params.beta + 1))
        )
    )


@pytest.fixture(scope="module")
def default_run():
    spec = DatasetSpec(seed=0)
    corpus = Corpus(spec=spec, scenes=generate(spec))
    result = fit(corpus.split("train"), corpus.split("val"), ModelConfig(), TrainConfig())
    return corpus, result


@pytest.mark.slow
def test_training_reduces_loss_on_default_corpus(default_run):
    _, result = default_run
    assert result.history[-1].train_loss < result.history[0].train_loss


@pytest.mark.slow
def test_default_run_scores_held_out_scenes(default_run):
    corpus, result = default_run
    report = metrics.evaluate(predict_dataset(result.best_state, corpus.split("test")))
    assert report.auc >= 0.90
    assert report.ece <= 0.10
    assert report.recall >= 0.80


@pytest.mark.slow
def test_centred_crop_riskier_than_corner(default_run):
    corpus, result = default_run
    positives = [s for s in corpus.split("test") if s.label == 1]
    size = positives[0].grid_size
    half = int(round(size * math.sqrt(0.5)))
    wins = 0
    for scene in positives:
        centre, _, _ = predict_on_crop(result.best_state, scene, CropGeometry.centered(size, half))
        corner, _, _ = predict_on_crop(result.best_state, scene, CropGeometry(size, half, 0, 0))
        wins += centre > corner
    assert wins / len(positives) >= 0.90
