"""Confusion matrices, accuracy and report files.

``confusion.csv`` has one row per actual class with columns::

    actual_class, pred_1, pred_2, pred_3, pred_4, row_total,
    pct_1, pct_2, pct_3, pct_4, precision, recall

``pct_j`` is the row percentage (so ``pct_i`` on the diagonal is recall in
percent). Precision or recall of a class with no predictions or no members is
left blank. ``report.json`` carries the same counts plus accuracy, per-class
metrics, notes and free-form metadata.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_LABELS, N_CLASSES
from .errors import DataError, EmptySet
from .fusion import classify

CSV_COLUMNS = (
    "actual_class",
    *(f"pred_{c}" for c in CLASS_LABELS),
    "row_total",
    *(f"pct_{c}" for c in CLASS_LABELS),
    "precision",
    "recall",
)
EMPTY_ROW_NOTE = "class {c} has no deployments in this set; its row is shown as 0%"


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (4, 4) int, rows = actual, columns = predicted

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (N_CLASSES, N_CLASSES) or np.any(counts < 0):
            raise ValueError("counts must be a non-negative 4x4 matrix")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_labels(cls, actual, predicted) -> ConfusionMatrix:
        actual = np.asarray(actual, dtype=int)
        predicted = np.asarray(predicted, dtype=int)
        if actual.size == 0:
            raise EmptySet("nothing to evaluate")
        if actual.shape != predicted.shape:
            raise ValueError("actual and predicted differ in length")
        counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        np.add.at(counts, (actual - 1, predicted - 1), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def row_percent(self) -> np.ndarray:
        rows = self.row_totals[:, None].astype(float)
        return np.divide(100.0 * self.counts, rows, out=np.zeros((N_CLASSES, N_CLASSES)), where=rows > 0)

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptySet("confusion matrix is empty")
        return float(np.trace(self.counts) / self.total)

    @property
    def precision(self) -> np.ndarray:
        cols = self.counts.sum(axis=0).astype(float)
        return np.divide(np.diag(self.counts), cols, out=np.full(N_CLASSES, np.nan), where=cols > 0)

    @property
    def recall(self) -> np.ndarray:
        rows = self.row_totals.astype(float)
        return np.divide(np.diag(self.counts), rows, out=np.full(N_CLASSES, np.nan), where=rows > 0)

    @property
    def empty_rows(self) -> list:
        return [c for c, t in zip(CLASS_LABELS, self.row_totals) if t == 0]


def format_accuracy(accuracy: float) -> str:
    return f"{100.0 * accuracy:.1f}%"


@dataclass(frozen=True)
class Evaluation:
    matrix: ConfusionMatrix
    ids: list
    actual: np.ndarray
    predicted: np.ndarray
    estimates: list

    @property
    def accuracy(self) -> float:
        return self.matrix.accuracy


def evaluate(bundle, table, seed: int = 0, iterations=None) -> Evaluation:
    """Classify every row of ``table`` via the fused estimate and tally the results."""
    if len(table) == 0:
        raise EmptySet("labeled set is empty")
    estimates = bundle.predict_table(table, np.random.default_rng(seed), iterations)
    predicted = np.array([int(classify(e)) for e in estimates], dtype=int)
    matrix = ConfusionMatrix.from_labels(table.labels, predicted)
    return Evaluation(matrix, list(table.ids), np.asarray(table.labels), predicted, estimates)


def _blank(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.6f}"


def write_report(matrix: ConfusionMatrix, out_dir, metadata: dict | None = None) -> tuple:
    """Write ``confusion.csv`` and ``report.json`` into ``out_dir``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pct, prec, rec = matrix.row_percent, matrix.precision, matrix.recall
    csv_path = out / "confusion.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, c in enumerate(CLASS_LABELS):
            w.writerow(
                [c, *matrix.counts[i].tolist(), int(matrix.row_totals[i])]
                + [f"{p:.6f}" for p in pct[i]]
                + [_blank(prec[i]), _blank(rec[i])]
            )

    notes = [EMPTY_ROW_NOTE.format(c=c) for c in matrix.empty_rows]
    report = {
        "n": matrix.total,
        "correct": int(np.trace(matrix.counts)),
        "accuracy": matrix.accuracy,
        "accuracy_text": format_accuracy(matrix.accuracy),
        "counts": matrix.counts.tolist(),
        "row_percent": np.round(pct, 6).tolist(),
        "per_class": [
            {
                "class": c,
                "support": int(matrix.row_totals[i]),
                "precision": None if not np.isfinite(prec[i]) else float(prec[i]),
                "recall": None if not np.isfinite(rec[i]) else float(rec[i]),
            }
            for i, c in enumerate(CLASS_LABELS)
        ],
        "notes": notes,
        "metadata": metadata or {},
    }
    json_path = out / "report.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def load_report(out_dir) -> ConfusionMatrix:
    """Read both report files back, checking that they agree with each other."""
    out = Path(out_dir)
    with open(out / "confusion.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != N_CLASSES or tuple(rows[0].keys()) != CSV_COLUMNS:
        raise DataError(f"{out / 'confusion.csv'}: unexpected layout")
    counts = np.array([[int(r[f"pred_{c}"]) for c in CLASS_LABELS] for r in rows])
    totals = np.array([int(r["row_total"]) for r in rows])
    if not np.array_equal(counts.sum(axis=1), totals):
        raise DataError("confusion.csv: row totals do not match counts")
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    if not np.array_equal(np.array(report["counts"]), counts):
        raise DataError("report.json and confusion.csv disagree on counts")
    if int(counts.sum()) != int(report["n"]):
        raise DataError(f"counts sum to {counts.sum()} but report says n = {report['n']}")
    return ConfusionMatrix(counts)
