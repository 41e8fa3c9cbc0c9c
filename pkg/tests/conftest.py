"""Session-scoped fixtures: the standard synthetic corpus and reference
world models are expensive enough to build once and share."""

import numpy as np
import pytest

from cardiosim.rollout import make_standard_corpus
from cardiosim.world_model import TrainConfig, prepare_epk_inputs, train_world_model

STANDARD_EPOCHS = 300


@pytest.fixture(scope="session")
def standard_corpus():
    return make_standard_corpus(seed=0)


@pytest.fixture(scope="session")
def epk_inputs(standard_corpus):
    cfg = TrainConfig()
    return prepare_epk_inputs(standard_corpus.train_set, standard_corpus.codec,
                              standard_corpus.base_params, standard_corpus.registry,
                              cfg, lead_scale=1.0)


@pytest.fixture(scope="session")
def model_cache(standard_corpus, epk_inputs):
    cache = {}

    def get(c: float, seed: int, epochs: int = STANDARD_EPOCHS):
        key = (c, seed, epochs)
        if key not in cache:
            cfg = TrainConfig(c=c, epochs=epochs, seed=seed)
            cache[key] = train_world_model(
                standard_corpus.train_set, standard_corpus.codec,
                standard_corpus.base_params, standard_corpus.registry, cfg,
                lead_scale=1.0, prepared=epk_inputs)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def reference_model(model_cache):
    """The artifact's main model: energy-regularized, seed 0."""
    return model_cache(0.25, 0)
