import pytest

from pffpclass.config import SCHEMA, default_config, default_config_text, parse_config
from pffpclass.errors import ConfigError
from pffpclass.forest import DEFAULT_GRID


def test_default_text_parses_to_defaults():
    assert parse_config(default_config_text()) == default_config()


def test_defaults():
    cfg = default_config()
    assert cfg.split.test_fraction == 0.15 and cfg.split.validation_fraction == 0.15
    assert cfg.folds == 5 and cfg.grid == DEFAULT_GRID
    assert cfg.fusion.prior_bias == 0.1 and cfg.fusion.prior_scale == pytest.approx(0.6)
    assert cfg.fusion.iterations == 40
    assert cfg.adasyn_k == 5 and cfg.adasyn_beta == 1.0


def test_missing_key_is_named():
    text = "\n".join(l for l in default_config_text().splitlines() if not l.startswith("adasyn.k"))
    with pytest.raises(ConfigError, match="adasyn.k"):
        parse_config(text)


def test_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(default_config_text() + "bogus.key = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(default_config_text() + "fusion.iterations = 30\n")


def test_bad_value():
    text = default_config_text().replace("forest.folds = 5", "forest.folds = five")
    with pytest.raises(ConfigError, match="forest.folds"):
        parse_config(text)
    text = default_config_text().replace("fusion.prior_bias = 0.1", "fusion.prior_bias = 0.5")
    with pytest.raises(ConfigError):
        parse_config(text)


def test_lists_and_none():
    text = default_config_text().replace("forest.max_depth = none, 5, 10, 20", "forest.max_depth = 3, none")
    cfg = parse_config(text)
    assert cfg.grid["max_depth"] == (3, None)


def test_schema_covers_every_tunable_constant():
    for key in ("fusion.prior_bias", "fusion.iterations", "split.test_fraction",
                "split.validation_fraction", "forest.folds"):
        assert key in SCHEMA
