"""Single-file model bundle.

Layout::

    PFFPBNDL\\n
    <JSON header, one line>\\n
    <payload: concatenated little-endian arrays>

The header records format version, architecture, fusion settings, forest
hyperparameters, training provenance, and for every array its name, dtype,
shape and byte offset, plus the SHA-256 of the payload. Forest trees are
stored as pre-order node arrays concatenated across trees, with
``forest.tree_offsets`` giving each tree's first node.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import N_CLASSES
from .bnn import BayesianCNN, NetworkArch
from .corpus import FeatureTable, ScalerParams
from .errors import CorruptBundle, VersionMismatch
from .forest import ForestModel, HyperParams, Tree
from .fusion import FusionConfig, predict_batch
from .signal import FeatureVector, SummaryFeatures

MAGIC = b"PFFPBNDL"
FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    scaler: ScalerParams
    forest: ForestModel
    network: BayesianCNN
    fusion: FusionConfig = FusionConfig()
    provenance: dict = field(default_factory=dict)

    def predict_table(self, table: FeatureTable, rng, iterations=None) -> list:
        """Uncertainty estimates for every row of an unscaled feature table."""
        config = self._config(iterations)
        return predict_batch(
            self.forest,
            self.network,
            self.scaler.scale_summary(table.summary),
            self.scaler.scale_bins(table.bins),
            config,
            rng,
        )

    def predict(self, summary: SummaryFeatures, features: FeatureVector, rng, iterations=None):
        config = self._config(iterations)
        return predict_batch(
            self.forest,
            self.network,
            self.scaler.scale_summary(summary.as_array()),
            self.scaler.scale_bins(features.bins),
            config,
            rng,
        )[0]

    def _config(self, iterations):
        if iterations is None:
            return self.fusion
        return FusionConfig(prior_bias=self.fusion.prior_bias, iterations=int(iterations))


def _forest_arrays(forest: ForestModel) -> dict:
    offsets = np.cumsum([0] + [t.n_nodes for t in forest.trees]).astype("<i8")
    cat = lambda attr: np.concatenate([getattr(t, attr) for t in forest.trees])  # noqa: E731
    return {
        "forest.tree_offsets": offsets,
        "forest.feature": cat("feature").astype("<i8"),
        "forest.threshold": cat("threshold").astype("<f8"),
        "forest.left": cat("left").astype("<i8"),
        "forest.right": cat("right").astype("<i8"),
        "forest.counts": cat("counts").astype("<f8"),
    }


def _bundle_arrays(bundle: ModelBundle) -> dict:
    arrays = {
        "scaler.summary_mean": bundle.scaler.summary_mean,
        "scaler.summary_std": bundle.scaler.summary_std,
        "scaler.bins_mean": bundle.scaler.bins_mean,
        "scaler.bins_std": bundle.scaler.bins_std,
    }
    arrays.update(_forest_arrays(bundle.forest))
    for key in bundle.network.arch.shapes():
        arrays[f"network.mu.{key}"] = bundle.network.mu[key]
        arrays[f"network.rho.{key}"] = bundle.network.rho[key]
    return {
        k: np.ascontiguousarray(v, dtype="<i8" if np.asarray(v).dtype.kind == "i" else "<f8")
        for k, v in arrays.items()
    }


def dumps_bundle(bundle: ModelBundle) -> bytes:
    arrays = _bundle_arrays(bundle)
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = arr.tobytes()
        manifest.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    hyper = asdict(bundle.forest.hyperparams)
    header = {
        "format": "pffpclass-bundle",
        "version": FORMAT_VERSION,
        "arch": asdict(bundle.network.arch),
        "fusion": asdict(bundle.fusion),
        "forest": {"hyperparams": hyper, "n_trees": len(bundle.forest.trees)},
        "provenance": bundle.provenance,
        "arrays": manifest,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return MAGIC + b"\n" + text.encode("utf-8") + b"\n" + payload


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write atomically: the target is replaced only after a complete write."""
    data = dumps_bundle(bundle)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def loads_bundle(data: bytes) -> ModelBundle:
    first = data.find(b"\n")
    second = data.find(b"\n", first + 1)
    if first < 0 or data[:first] != MAGIC or second < 0:
        raise CorruptBundle("not a model bundle (bad magic or missing header)")
    try:
        header = json.loads(data[first + 1 : second].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBundle(f"unreadable bundle header: {exc}") from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"bundle format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    payload = data[second + 1 :]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptBundle(
            f"payload is {len(payload)} bytes, header says {header.get('payload_bytes')}"
        )
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptBundle("payload checksum mismatch")

    arrays = {}
    try:
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
            arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        return _assemble(header, arrays)
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptBundle(f"inconsistent bundle contents: {exc}") from None


def _assemble(header: dict, arrays: dict) -> ModelBundle:
    scaler = ScalerParams(
        arrays["scaler.summary_mean"],
        arrays["scaler.summary_std"],
        arrays["scaler.bins_mean"],
        arrays["scaler.bins_std"],
    )
    offsets = arrays["forest.tree_offsets"]
    trees = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        trees.append(
            Tree(
                arrays["forest.feature"][a:b].copy(),
                arrays["forest.threshold"][a:b].copy(),
                arrays["forest.left"][a:b].copy(),
                arrays["forest.right"][a:b].copy(),
                arrays["forest.counts"][a:b].reshape(-1, N_CLASSES).copy(),
            )
        )
    forest = ForestModel(tuple(trees), HyperParams(**header["forest"]["hyperparams"]))
    arch = NetworkArch(**header["arch"])
    shapes = arch.shapes()
    mu = {k: arrays[f"network.mu.{k}"].reshape(s) for k, s in shapes.items()}
    rho = {k: arrays[f"network.rho.{k}"].reshape(s) for k, s in shapes.items()}
    return ModelBundle(
        scaler, forest, BayesianCNN(arch, mu, rho), FusionConfig(**header["fusion"]),
        header.get("provenance", {}),
    )


def load_bundle(path) -> ModelBundle:
    return loads_bundle(Path(path).read_bytes())
