"""Flat ``key = value`` configuration for the train command.

Every key must be present; ``default_config_text()`` emits a complete file
with the reference defaults. Lists are comma separated, ``none`` means no
limit, booleans are ``true``/``false``. ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bnn import TrainConfig
from .corpus import SplitSpec
from .errors import ConfigError
from .forest import DEFAULT_GRID
from .fusion import FusionConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() == "none" else int(text)


def _list(conv):
    return lambda text: tuple(conv(t) for t in text.split(",") if t.strip())


# key -> (parser, default value, formatter)
_fmt_list = lambda v: ", ".join("none" if x is None else str(x).lower() for x in v)  # noqa: E731
_fmt = lambda v: str(v).lower() if isinstance(v, bool) else str(v)  # noqa: E731

SCHEMA = {
    "split.test_fraction": (float, 0.15, _fmt),
    "split.validation_fraction": (float, 0.15, _fmt),
    "split.stratified": (_bool, True, _fmt),
    "adasyn.k": (int, 5, _fmt),
    "adasyn.beta": (float, 1.0, _fmt),
    "forest.folds": (int, 5, _fmt),
    "forest.n_trees": (_list(int), DEFAULT_GRID["n_trees"], _fmt_list),
    "forest.max_depth": (_list(_opt_int), DEFAULT_GRID["max_depth"], _fmt_list),
    "forest.min_samples_split": (_list(int), DEFAULT_GRID["min_samples_split"], _fmt_list),
    "forest.min_samples_leaf": (_list(int), DEFAULT_GRID["min_samples_leaf"], _fmt_list),
    "forest.bootstrap": (_list(_bool), DEFAULT_GRID["bootstrap"], _fmt_list),
    "forest.features_per_split": (int, 1, _fmt),
    "bnn.learning_rate": (float, 1e-3, _fmt),
    "bnn.max_epochs": (int, 200, _fmt),
    "bnn.patience": (int, 20, _fmt),
    "bnn.batch_size": (int, 32, _fmt),
    "bnn.prior_variance": (float, 0.1, _fmt),
    "bnn.init_std": (float, 0.05, _fmt),
    "bnn.validation_draws": (int, 10, _fmt),
    "fusion.prior_bias": (float, 0.1, _fmt),
    "fusion.iterations": (int, 40, _fmt),
}


@dataclass(frozen=True)
class PipelineConfig:
    split: SplitSpec = SplitSpec()
    adasyn_k: int = 5
    adasyn_beta: float = 1.0
    folds: int = 5
    grid: dict = field(default_factory=lambda: dict(DEFAULT_GRID))
    features_per_split: int = 1
    train: TrainConfig = TrainConfig()
    init_std: float = 0.05
    fusion: FusionConfig = FusionConfig()

    def with_seed(self, seed: int) -> PipelineConfig:
        from dataclasses import replace

        return replace(
            self,
            split=replace(self.split, seed=seed),
            train=replace(self.train, seed=seed),
        )


def _from_values(v: dict) -> PipelineConfig:
    return PipelineConfig(
        split=SplitSpec(
            test_fraction=v["split.test_fraction"],
            validation_fraction=v["split.validation_fraction"],
            stratified=v["split.stratified"],
        ),
        adasyn_k=v["adasyn.k"],
        adasyn_beta=v["adasyn.beta"],
        folds=v["forest.folds"],
        grid={
            "n_trees": v["forest.n_trees"],
            "max_depth": v["forest.max_depth"],
            "min_samples_split": v["forest.min_samples_split"],
            "min_samples_leaf": v["forest.min_samples_leaf"],
            "bootstrap": v["forest.bootstrap"],
        },
        features_per_split=v["forest.features_per_split"],
        train=TrainConfig(
            learning_rate=v["bnn.learning_rate"],
            max_epochs=v["bnn.max_epochs"],
            patience=v["bnn.patience"],
            batch_size=v["bnn.batch_size"],
            prior_variance=v["bnn.prior_variance"],
            validation_draws=v["bnn.validation_draws"],
        ),
        init_std=v["bnn.init_std"],
        fusion=FusionConfig(prior_bias=v["fusion.prior_bias"], iterations=v["fusion.iterations"]),
    )


def default_config() -> PipelineConfig:
    return _from_values({k: spec[1] for k, spec in SCHEMA.items()})


def default_config_text() -> str:
    lines = ["# pffpclass training configuration; every key is required"]
    section = None
    for key, (_, default, fmt) in SCHEMA.items():
        head = key.split(".")[0]
        if head != section:
            lines.append("")
            section = head
        lines.append(f"{key} = {fmt(default)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> PipelineConfig:
    """Parse a complete config file; missing, unknown, duplicate or bad keys raise ConfigError."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    missing = [k for k in SCHEMA if k not in values]
    if missing:
        raise ConfigError(f"missing config key {missing[0]!r}" + (
            f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""
        ))
    try:
        return _from_values(values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_echo(config: PipelineConfig) -> dict:
    """Plain-dict view stored in bundle provenance."""
    return {
        "split.test_fraction": config.split.test_fraction,
        "split.validation_fraction": config.split.validation_fraction,
        "split.stratified": config.split.stratified,
        "adasyn.k": config.adasyn_k,
        "adasyn.beta": config.adasyn_beta,
        "forest.folds": config.folds,
        "forest.grid": {k: list(v) for k, v in config.grid.items()},
        "forest.features_per_split": config.features_per_split,
        "bnn.learning_rate": config.train.learning_rate,
        "bnn.max_epochs": config.train.max_epochs,
        "bnn.patience": config.train.patience,
        "bnn.batch_size": config.train.batch_size,
        "bnn.prior_variance": config.train.prior_variance,
        "bnn.init_std": config.init_std,
        "bnn.validation_draws": config.train.validation_draws,
        "fusion.prior_bias": config.fusion.prior_bias,
        "fusion.iterations": config.fusion.iterations,
    }
