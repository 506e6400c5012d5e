"""End-to-end training and held-out set recovery."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict

import numpy as np

from . import __version__
from .bnn import NetworkArch, init_network, predict_mc, train
from .bundle import ModelBundle
from .config import PipelineConfig, config_echo
from .corpus import FeatureTable, SplitSpec, adasyn, apply_scaler, fit_scaler, split
from .errors import SplitMismatch
from .fusion import classify
from .forest import HyperParams, grid_search_cv, predict_proba

log = logging.getLogger(__name__)


def table_digest(table: FeatureTable) -> str:
    """SHA-256 over ids, labels and feature values, independent of file formatting."""
    h = hashlib.sha256()
    h.update("\n".join(table.ids).encode("utf-8"))
    h.update(np.ascontiguousarray(table.labels, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(table.summary, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(table.bins, dtype="<f8").tobytes())
    return h.hexdigest()


def _accuracy(pred, y) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(y))) if len(y) else float("nan")


def train_pipeline(
    table: FeatureTable,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    threads: int = 1,
    arch: NetworkArch = NetworkArch(),
):
    """Split, scale, fit the forest prior and the network likelihood, and bundle them.

    Returns ``(bundle, metrics)`` where ``metrics`` holds validation-set
    accuracies of the forest, the network predictive mean and the fused
    classifier.
    """
    config = config.with_seed(seed)
    train_t, val_t, test_t = split(table, config.split)
    log.info("split sizes: train %d, validation %d, test %d", len(train_t), len(val_t), len(test_t))
    scaler = fit_scaler(train_t)
    s_train = apply_scaler(scaler, train_t)
    s_val = apply_scaler(scaler, val_t)

    base = HyperParams(features_per_split=config.features_per_split, seed=seed)
    search = grid_search_cv(
        s_train.summary, s_train.labels, config.grid, config.folds, seed, threads, base
    )
    log.info("forest winner: %s", search.best)

    Xa, ya = adasyn(s_train.bins, s_train.labels, config.adasyn_k, config.adasyn_beta, seed)
    log.info("ADASYN: %d -> %d network training rows", len(s_train), len(ya))
    net0 = init_network(arch, seed, config.init_std)
    network, history = train(net0, Xa, ya, s_val.bins, s_val.labels, config.train)
    log.info("network: %d epochs, best %d", len(history), history.best_epoch)

    provenance = {
        "package_version": __version__,
        "seed": seed,
        "split": {
            "test_fraction": config.split.test_fraction,
            "validation_fraction": config.split.validation_fraction,
            "stratified": config.split.stratified,
            "seed": config.split.seed,
        },
        "n_rows": len(table),
        "features_sha256": table_digest(table),
        "split_sizes": {"train": len(train_t), "validation": len(val_t), "test": len(test_t)},
        "test_ids": list(test_t.ids),
        "forest": {
            "winner": asdict(search.best),
            "cv_table": [
                {**row, "fold_scores": [float(s) for s in row["fold_scores"]]}
                for row in search.table
            ],
        },
        "network": {
            "n_parameters": arch.n_parameters(),
            "training_rows": int(len(ya)),
            "epochs_run": len(history),
            "best_epoch": history.best_epoch,
        },
        "config": config_echo(config),
    }
    bundle = ModelBundle(scaler, search.model, network, config.fusion, provenance)

    metrics = {}
    if len(val_t):
        rng = np.random.default_rng(seed)
        forest_pred = np.argmax(predict_proba(search.model, s_val.summary), axis=1) + 1
        net_probs = predict_mc(network, s_val.bins, config.fusion.iterations, rng).mean(axis=0)
        fused = bundle.predict_table(val_t, np.random.default_rng(seed))
        metrics = {
            "validation_rows": len(val_t),
            "forest_accuracy": _accuracy(forest_pred, val_t.labels),
            "network_accuracy": _accuracy(np.argmax(net_probs, axis=1) + 1, val_t.labels),
            "fused_accuracy": _accuracy([int(classify(e)) for e in fused], val_t.labels),
            "cv_accuracy": max(row["mean_accuracy"] for row in search.table),
        }
    bundle.provenance["validation"] = metrics
    return bundle, metrics


def held_out_test(bundle: ModelBundle, table: FeatureTable) -> FeatureTable:
    """Recreate the bundle's test split from ``table`` and check it against provenance."""
    prov = bundle.provenance or {}
    spec = prov.get("split")
    if not spec or "seed" not in spec or "test_ids" not in prov:
        raise SplitMismatch("bundle provenance has no split seed; use --split all")
    _, _, test = split(table, SplitSpec(**spec))
    if list(test.ids) != list(prov["test_ids"]):
        raise SplitMismatch(
            "features file does not reproduce the bundle's test split "
            f"({len(test)} rows recomputed, {len(prov['test_ids'])} recorded)"
        )
    return test

