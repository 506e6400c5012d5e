from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pffpclass.config import default_config, default_config_text  # noqa: E402
from pffpclass.synthetic import make_corpus, to_table  # noqa: E402

SMALL_GRID = {
    "n_trees": (10, 20),
    "max_depth": (None, 5),
    "min_samples_split": (2,),
    "min_samples_leaf": (1,),
    "bootstrap": (True,),
}


def quick_config(max_epochs=15, **grid):
    cfg = default_config()
    return replace(
        cfg,
        grid={**SMALL_GRID, **grid},
        train=replace(cfg.train, max_epochs=max_epochs, patience=10),
    )


QUICK = {
    "forest.n_trees = 100, 200, 500": "forest.n_trees = 10, 20",
    "forest.max_depth = none, 5, 10, 20": "forest.max_depth = none, 5",
    "forest.min_samples_split = 2, 5, 10": "forest.min_samples_split = 2",
    "forest.min_samples_leaf = 1, 2, 4": "forest.min_samples_leaf = 1",
    "forest.bootstrap = true, false": "forest.bootstrap = true",
    "bnn.max_epochs = 200": "bnn.max_epochs = 15",
    "bnn.patience = 20": "bnn.patience = 10",
}


def quick_config_text():
    text = default_config_text()
    for old, new in QUICK.items():
        assert old in text
        text = text.replace(old, new)
    return text


@pytest.fixture(scope="session")
def synthetic_table():
    return to_table(make_corpus(120, seed=11))


@pytest.fixture(scope="session")
def trained(synthetic_table):
    from pffpclass.pipeline import train_pipeline

    bundle, metrics = train_pipeline(synthetic_table, quick_config(), seed=5)
    return bundle, metrics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
