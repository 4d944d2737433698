"""Shared fixtures: a small, fast synthetic corpus and a trained model on it.

The small corpus keeps unit and service tests in the sub-second range; the
full-size default corpus is reserved for the acceptance tests.
"""

import dataclasses

import numpy as np
import pytest

from intentdesk import encoder as enc
from intentdesk import head as hd
from intentdesk.corpus import SynthesisConfig, generate_corpus
from intentdesk.evaluation import three_way_split
from intentdesk.trainer import TrainConfig, train

SMALL_SYNTH = SynthesisConfig(
    num_intents=12,
    num_industries=2,
    intents_per_industry=6,
    clients_per_industry=6,
    client_intent_fraction=(0.3, 0.6),
    tickets_per_client=(60, 90),
    confusable_pair_fraction=0.3,
    ambiguous_pair_fraction=0.17,
    dust_intents_per_client=2,
    keywords_per_intent=5,
    noise_vocab_size=60,
    seed=7,
)

SMALL_ENCODER = enc.EncoderConfig(buckets=512, embedding_dim=16)
SMALL_TRAIN = TrainConfig(batch_size=128, max_epochs=4, patience=2, learning_rate=3e-3, seed=0)


def small_head_config(num_classes: int, use_intents: bool = True) -> hd.HeadConfig:
    return hd.HeadConfig(
        text_dim=SMALL_ENCODER.embedding_dim,
        num_classes=num_classes,
        intents_embed_dim=8,
        projection_dim=24,
        num_residual_layers=1,
        intents_embedding_dropout=0.5,
        residual_dropout=0.10,
        use_intents_feature=use_intents,
    )


@pytest.fixture(scope="session")
def small_bundle():
    return generate_corpus(SMALL_SYNTH)


@pytest.fixture(scope="session")
def small_split(small_bundle):
    return three_way_split(small_bundle.examples, seed=0)


@pytest.fixture(scope="session")
def small_masks(small_bundle):
    """All-relevant masks for every registered client."""
    return small_bundle.registry.masks()


@pytest.fixture(scope="session")
def small_model(small_bundle, small_split, small_masks):
    return train(
        small_split,
        small_masks,
        small_bundle.registry.catalog,
        SMALL_ENCODER,
        small_head_config(small_bundle.catalog.size),
        SMALL_TRAIN,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
