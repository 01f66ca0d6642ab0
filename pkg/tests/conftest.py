"""Shared fixtures: a small corpus and a small network."""

import pytest

from beta_risk.config import Activation, DatasetSpec, ModelConfig, TrainConfig
from beta_risk.synthdata import Corpus, generate


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(n_samples=40, grid_size=32, num_scales=2, seed=3)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return Corpus(spec=small_spec, scenes=generate(small_spec))


@pytest.fixture
def small_model():
    return ModelConfig(num_scales=2, encoder_widths=[8], activation=Activation.TANH)


@pytest.fixture
def quick_train():
    return TrainConfig(epochs=2, batch_size=8, seed=0)
