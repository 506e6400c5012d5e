"""Bayesian fusion of the forest prior with network likelihood samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import N_CLASSES
from .bnn import BayesianCNN, predict_mc
from .corpus import SedimentClass
from .errors import DegenerateProduct, NotAProbabilityVector
from .forest import ForestModel, predict_proba

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class FusionConfig:
    """``prior_bias`` is added to every class after scaling the prior by
    ``1 - 4 * prior_bias``, so the tempered prior still sums to one."""

    prior_bias: float = 0.1
    iterations: int = 40

    def __post_init__(self):
        if not 0.0 < self.prior_bias < 1.0 / N_CLASSES:
            raise ValueError(f"prior_bias must lie in (0, 0.25), got {self.prior_bias}")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")

    @property
    def prior_scale(self) -> float:
        return 1.0 - N_CLASSES * self.prior_bias


def _check_probability(p, name="vector"):
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (N_CLASSES,) or not np.all(np.isfinite(p)):
        raise NotAProbabilityVector(f"{name} must be finite with {N_CLASSES} components")
    if np.any(p < -_SUM_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise NotAProbabilityVector(f"{name} is not a probability vector: {p}")
    return p


def temper_prior(p, config: FusionConfig = FusionConfig()) -> np.ndarray:
    """``scale * p + bias``; lifts every class to at least ``bias`` and keeps the ranking."""
    p = _check_probability(p, "prior")
    return config.prior_scale * p + config.prior_bias


def fuse(prior, likelihood) -> np.ndarray:
    """Elementwise product renormalized to one. ``likelihood`` may be (n, 4)."""
    prod = np.asarray(prior, dtype=float) * np.asarray(likelihood, dtype=float)
    total = prod.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(total)) or np.any(total <= 0.0):
        raise DegenerateProduct("prior x likelihood has no mass")
    return prod / total


@dataclass(frozen=True)
class UncertaintyEstimate:
    samples: np.ndarray  # (n, 4) posterior draws
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    predicted: SedimentClass
    prior: np.ndarray  # forest output
    tempered_prior: np.ndarray
    likelihood: np.ndarray  # (n, 4) network draws

    @property
    def iterations(self) -> int:
        return int(self.samples.shape[0])


def quartiles(samples) -> tuple:
    """Per-class Q1, Q2, Q3 by linear interpolation between order statistics."""
    q = np.percentile(np.asarray(samples, dtype=float), [25.0, 50.0, 75.0], axis=0)
    return q[0], q[1], q[2]


def classify(estimate) -> SedimentClass:
    """Class with the highest median probability; ties go to the lowest label.

    Accepts an :class:`UncertaintyEstimate` or a median 4-vector.
    """
    q2 = estimate.q2 if isinstance(estimate, UncertaintyEstimate) else np.asarray(estimate)
    return SedimentClass(int(np.argmax(q2)) + 1)


def estimate_from_samples(prior, likelihood, config: FusionConfig = FusionConfig()):
    tempered = temper_prior(prior, config)
    posterior = fuse(tempered, likelihood)
    q1, q2, q3 = quartiles(posterior)
    return UncertaintyEstimate(
        posterior, q1, q2, q3, classify(q2), np.asarray(prior, dtype=float), tempered,
        np.asarray(likelihood, dtype=float),
    )


def predict_with_uncertainty(
    forest: ForestModel,
    network: BayesianCNN,
    summary,
    features,
    config: FusionConfig = FusionConfig(),
    rng=None,
) -> UncertaintyEstimate:
    """Prior once from the forest, ``config.iterations`` network draws, fused per draw.

    ``summary`` and ``features`` must already be scaled with the scalers the
    models were trained with.
    """
    rng = np.random.default_rng() if rng is None else rng
    prior = predict_proba(forest, np.asarray(summary, dtype=float).reshape(-1))
    likelihood = predict_mc(network, np.asarray(features, dtype=float).reshape(-1), config.iterations, rng)
    return estimate_from_samples(prior, likelihood, config)


def predict_batch(forest, network, summary, features, config=FusionConfig(), rng=None) -> list:
    """:func:`predict_with_uncertainty` for many rows, sharing weight draws across rows."""
    rng = np.random.default_rng() if rng is None else rng
    summary = np.asarray(summary, dtype=float).reshape(-1, 2)
    features = np.asarray(features, dtype=float).reshape(summary.shape[0], -1)
    priors = predict_proba(forest, summary)
    likelihood = predict_mc(network, features, config.iterations, rng)  # (n, B, 4)
    return [
        estimate_from_samples(priors[i], likelihood[:, i, :], config)
        for i in range(summary.shape[0])
    ]
