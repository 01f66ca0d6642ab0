"""Tests for the synthetic scene corpus and pooled crop features."""

from dataclasses import replace

import numpy as np
import pytest

from beta_risk.config import DatasetSpec
from beta_risk.errors import StructuralError
from beta_risk.labelgen import CropGeometry
from beta_risk.synthdata import (
    FEATURES_PER_SCALE,
    KIND_EASY,
    KIND_HARD,
    KIND_POSITIVE,
    Scene,
    build_records,
    crop_features,
    full_features,
    generate,
    load_corpus,
    pool_window,
    read_dataset,
    render_scene,
    window_energy,
    write_dataset,
)


def test_same_spec_gives_identical_corpus(small_spec):
    a, b = generate(small_spec), generate(small_spec)
    for x, y in zip(a, b):
        assert x.label == y.label and x.location == y.location
        for gx, gy in zip(x.scales, y.scales):
            np.testing.assert_array_equal(gx, gy)


def test_positive_count_rounding():
    records = build_records(DatasetSpec(n_samples=2000, positive_fraction=0.35))
    assert sum(r.label for r in records) == 700


def test_zero_positive_fraction():
    records = build_records(DatasetSpec(n_samples=50, positive_fraction=0.0))
    assert all(r.label == 0 for r in records)
    assert {r.scene_kind for r in records} <= {KIND_HARD, KIND_EASY}


def test_splits_are_stratified():
    records = build_records(DatasetSpec(n_samples=200, seed=1))
    for split in ("train", "val", "test"):
        labels = {r.label for r in records if r.split == split}
        assert labels == {0, 1}
    assert sum(r.split == "test" for r in records) == pytest.approx(30, abs=2)


def test_scene_shapes(small_corpus, small_spec):
    scene = small_corpus.scenes[0]
    assert len(scene.scales) == small_spec.num_scales
    assert all(g.shape == (32, 32) for g in scene.scales)
    assert full_features(scene).shape == (small_spec.num_scales, FEATURES_PER_SCALE)


def test_constant_scene_has_trivial_features():
    scene = Scene(scales=[np.zeros((32, 32))], label=0, location=(0.0, 0.0), seed=0)
    features = crop_features(scene, CropGeometry.full(32))
    assert not np.any(features)


def test_pooling_is_local_to_the_window():
    rng = np.random.default_rng(0)
    grid = rng.standard_normal((32, 32))
    scene = Scene(scales=[grid], label=0, location=(0.0, 0.0), seed=0)
    g = CropGeometry(32, 16, 8, 4)
    expected = pool_window(grid[4:20, 8:24])
    np.testing.assert_array_equal(crop_features(scene, g)[0], expected)


def test_pool_window_statistics():
    window = np.zeros((8, 8))
    window[0:2, 0:2] = np.array([[1.0, 3.0], [5.0, 7.0]])
    stats = pool_window(window).reshape(4, 4, 4)
    assert stats[0, 0, 0] == pytest.approx(4.0)  # mean
    assert stats[0, 0, 1] == 7.0  # max
    assert stats[0, 0, 2] == pytest.approx(np.std([1.0, 3.0, 5.0, 7.0]))
    assert not np.any(stats[3, 3])


def test_pool_window_too_small():
    with pytest.raises(StructuralError):
        pool_window(np.zeros((4, 4)))


def test_crop_geometry_must_fit_scene(small_corpus):
    with pytest.raises(StructuralError):
        crop_features(small_corpus.scenes[0], CropGeometry.full(64))


def test_motif_energy_beats_matched_negative():
    spec = DatasetSpec(n_samples=20, noise_level=0.0)
    centre = CropGeometry.centered(spec.grid_size, 32)
    for record in build_records(spec):
        if record.scene_kind != KIND_POSITIVE:
            continue
        positive = render_scene(record, spec)
        plain = replace(record, scene_kind=KIND_EASY, label=0)
        negative = render_scene(plain, spec)
        energy = window_energy(positive.scales[0], centre)
        assert energy > window_energy(negative.scales[0], centre)


def test_centre_crop_differs_from_corner(small_corpus):
    scene = next(s for s in small_corpus.scenes if s.label == 1)
    size = scene.grid_size // 2
    centre = crop_features(scene, CropGeometry.centered(scene.grid_size, size))
    corner = crop_features(scene, CropGeometry(scene.grid_size, size, 0, 0))
    assert np.max(np.abs(centre - corner)) > 0.05


@pytest.mark.slow
def test_centre_energy_beats_corners_on_default_corpus():
    spec = DatasetSpec(seed=0)
    size = spec.grid_size
    wins = total = 0
    for scene in generate(spec):
        if scene.label != 1:
            continue
        grid = scene.scales[0]
        centre = window_energy(grid, CropGeometry.centered(size, 32))
        corners = [
            window_energy(grid, CropGeometry(size, 32, x, y))
            for x in (0, size - 32)
            for y in (0, size - 32)
        ]
        total += 1
        wins += centre > max(corners)
    assert wins / total >= 0.99


def test_dataset_file_round_trip(tmp_path, small_spec):
    path = tmp_path / "data.jsonl"
    write_dataset(small_spec, path)
    spec, records = read_dataset(path)
    assert spec == small_spec
    assert records == build_records(small_spec)
    corpus = load_corpus(path)
    rendered = generate(small_spec)[3].scales[1]
    np.testing.assert_array_equal(corpus.scenes[3].scales[1], rendered)


def test_dataset_file_is_byte_stable(tmp_path, small_spec):
    write_dataset(small_spec, tmp_path / "a.jsonl")
    write_dataset(small_spec, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_dataset_without_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"kind": "sample", "sample_id": 0}\n')
    with pytest.raises(StructuralError):
        read_dataset(path)
