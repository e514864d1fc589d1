"""Shared fixtures.

Training is the expensive part, so the full-size model is built once
per session and shared by everything downstream, including a saved
copy on disk for CLI and server tests. Unit tests that need a model
but not an accurate one build tiny ones locally instead.
"""
from __future__ import annotations

import pytest

from nlsearch import assets
from nlsearch.grammar import generate_dataset, load_lexicon_dir, parse_grammar, read_conll
from nlsearch.schema import load_fixture
from nlsearch.service import SearchSystem
from nlsearch.tagger import TrainConfig, save_model, train

# shipped-model recipe; changing any of these invalidates calibrated tests
SHIP_TRAIN_SIZE = 20000
SHIP_DATA_SEED = 7
SHIP_NOISE_P = 0.2
SHIP_CONFIG = TrainConfig(max_epochs=8, patience=3, seed=3)


@pytest.fixture(scope="session")
def demo_fixture():
    return load_fixture(assets.demo_fixture_path())


@pytest.fixture(scope="session")
def training_grammar():
    return parse_grammar(assets.training_grammar_path())


@pytest.fixture(scope="session")
def suggest_grammar():
    return parse_grammar(assets.suggest_grammar_path())


@pytest.fixture(scope="session")
def lexicons():
    return load_lexicon_dir(assets.lexicon_dir())


@pytest.fixture(scope="session")
def ship_model(training_grammar, lexicons):
    dataset = generate_dataset(
        training_grammar, lexicons, SHIP_TRAIN_SIZE, noise_p=SHIP_NOISE_P, seed=SHIP_DATA_SEED
    )
    nrd = read_conll(assets.nrd_path())
    return train(dataset, nrd, SHIP_CONFIG)


@pytest.fixture(scope="session")
def system(demo_fixture, ship_model, suggest_grammar):
    return SearchSystem(demo_fixture, ship_model, suggest_grammar)


@pytest.fixture(scope="session")
def model_file(ship_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "ner-model.json"
    save_model(ship_model, str(path))
    return str(path)
