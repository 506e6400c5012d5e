"""Labeled corpus handling: class assignment, loading, splitting, scaling, rebalancing."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import N_BINS
from .errors import (
    ClassTooSmall,
    DataError,
    EmptyCorpus,
    TooFewNeighbors,
    Unclassifiable,
)
from .signal import (
    FeatureVector,
    ImpactConfig,
    SummaryFeatures,
    extract_features,
    read_raw_csv,
)

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = (
    "deployment_id",
    "raw_file",
    "site",
    "sublocation",
    "sand_content_pct",
    "fines_content_pct",
    "liquid_limit",
    "uscs_symbol",
    "class_label",
)
BIN_COLUMNS = tuple(f"bin_{k:03d}" for k in range(N_BINS))
FEATURE_COLUMNS = ("deployment_id", "norm_max_decel", "depth_m", *BIN_COLUMNS, "class_label")


class SedimentClass(IntEnum):
    COHESIONLESS_NONPLASTIC = 1
    COHESIONLESS_SOME_PLASTICITY = 2
    COHESIVE_LOW_PLASTICITY = 3
    COHESIVE_HIGH_PLASTICITY = 4

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]

    @property
    def uscs_groups(self) -> tuple[str, ...]:
        return _USCS[self]


_DESCRIPTIONS = {
    SedimentClass(1): "cohesionless sediment with little to no plasticity",
    SedimentClass(2): "cohesionless sediment with some plasticity",
    SedimentClass(3): "cohesive sediment with low plasticity",
    SedimentClass(4): "cohesive sediment with high plasticity",
}
_USCS = {
    SedimentClass(1): ("SP", "SW", "SP-SM", "SP-SC", "SW-SM", "SW-SC"),
    SedimentClass(2): ("SM", "SC", "SC-SM"),
    SedimentClass(3): ("ML", "CL", "CL-ML"),
    SedimentClass(4): ("MH", "CH"),
}


def assign_class(sand_content, fines_content, liquid_limit=None) -> SedimentClass:
    """Sediment behavior class from gradation and plasticity.

    Sand-dominated (sand > 50 %) splits on fines at 12 %; fines-dominated
    (fines > 50 %) splits on liquid limit at 50. Boundary values go to the
    more plastic class.
    """
    for name, value in (("sand", sand_content), ("fines", fines_content)):
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"{name} content {value} outside [0, 100]")
    if sand_content > 50.0:
        return SedimentClass(1) if fines_content < 12.0 else SedimentClass(2)
    if fines_content > 50.0:
        if liquid_limit is None or (isinstance(liquid_limit, float) and math.isnan(liquid_limit)):
            raise Unclassifiable("fines-dominated sample without a liquid limit")
        return SedimentClass(3) if liquid_limit < 50.0 else SedimentClass(4)
    raise Unclassifiable(
        f"neither sand ({sand_content}%) nor fines ({fines_content}%) exceed 50%"
    )


@dataclass(frozen=True)
class LabeledDeployment:
    deployment_id: str
    summary: SummaryFeatures
    features: FeatureVector
    label: SedimentClass
    site: str = ""
    sublocation: str | None = None


@dataclass(frozen=True)
class RowProblem:
    row: int
    deployment_id: str
    reason: str
    level: str = "error"

    def __str__(self):
        return f"row {self.row} ({self.deployment_id}): {self.level}: {self.reason}"


@dataclass
class FeatureTable:
    """Column-oriented view of a set of deployments."""

    ids: list
    summary: np.ndarray  # (n, 2): normalized max deceleration, depth
    bins: np.ndarray  # (n, 211)
    labels: np.ndarray  # (n,) ints 1..4

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.summary = np.asarray(self.summary, dtype=float).reshape(-1, 2)
        self.bins = np.asarray(self.bins, dtype=float).reshape(-1, N_BINS)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        n = len(self.ids)
        if not (self.summary.shape[0] == self.bins.shape[0] == self.labels.shape[0] == n):
            raise ValueError("feature table columns differ in length")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_deployments(cls, deployments) -> FeatureTable:
        return cls(
            [d.deployment_id for d in deployments],
            np.array([d.summary.as_array() for d in deployments]).reshape(-1, 2),
            np.array([d.features.bins for d in deployments]).reshape(-1, N_BINS),
            np.array([int(d.label) for d in deployments], dtype=int),
        )

    def take(self, index) -> FeatureTable:
        index = np.asarray(index, dtype=int)
        return FeatureTable(
            [self.ids[i] for i in index],
            self.summary[index],
            self.bins[index],
            self.labels[index],
        )

    def class_counts(self) -> dict:
        return {c: int(np.sum(self.labels == c)) for c in range(1, 5)}


def _parse_optional_float(text):
    text = (text or "").strip()
    return float(text) if text else None


def _load_row(rowno, row, raw_dir, impact_config):
    """Returns (deployment or None, list of problems)."""
    dep_id = (row.get("deployment_id") or "").strip() or f"row{rowno}"
    problems = []
    try:
        sand = _parse_optional_float(row.get("sand_content_pct"))
        fines = _parse_optional_float(row.get("fines_content_pct"))
        ll = _parse_optional_float(row.get("liquid_limit"))
        given = _parse_optional_float(row.get("class_label"))
    except ValueError as exc:
        return None, [RowProblem(rowno, dep_id, f"bad numeric field: {exc}")]

    label = None
    if sand is not None and fines is not None:
        try:
            label = assign_class(sand, fines, ll)
        except (Unclassifiable, ValueError) as exc:
            if given is None:
                return None, [RowProblem(rowno, dep_id, f"unclassifiable: {exc}")]
    if given is not None:
        if given not in (1, 2, 3, 4):
            return None, [RowProblem(rowno, dep_id, f"class_label {given:g} not in 1-4")]
        if label is not None and int(given) != int(label):
            problems.append(
                RowProblem(
                    rowno,
                    dep_id,
                    f"class_label {int(given)} disagrees with criteria ({int(label)}); using class_label",
                    level="warning",
                )
            )
        label = SedimentClass(int(given))
    if label is None:
        return None, [RowProblem(rowno, dep_id, "no class_label and incomplete criteria")]

    raw_path = Path(raw_dir) / (row.get("raw_file") or "").strip()
    try:
        record = read_raw_csv(raw_path, deployment_id=dep_id)
        _, summary, features = extract_features(record, impact_config)
    except (DataError, OSError) as exc:
        return None, problems + [RowProblem(rowno, dep_id, f"{type(exc).__name__}: {exc}")]

    dep = LabeledDeployment(
        dep_id,
        summary,
        features,
        label,
        site=(row.get("site") or "").strip(),
        sublocation=(row.get("sublocation") or "").strip() or None,
    )
    return dep, problems


def load_corpus(manifest_path, raw_dir, impact_config=ImpactConfig(), threads=1):
    """Load every manifest row into a ``LabeledDeployment``.

    Returns ``(deployments, problems)``. Rows that fail are skipped and
    reported; :class:`EmptyCorpus` is raised only when nothing loads.
    """
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"deployment_id", "raw_file"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"manifest lacks columns: {', '.join(sorted(missing))}")
        rows = list(enumerate(reader, start=2))

    def work(item):
        return _load_row(item[0], item[1], raw_dir, impact_config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, rows))
    else:
        results = [work(item) for item in rows]

    deployments, problems = [], []
    for dep, probs in results:
        problems.extend(probs)
        if dep is not None:
            deployments.append(dep)
    for p in problems:
        log.warning("%s", p)
    if not deployments:
        raise EmptyCorpus(f"no deployment could be loaded from {manifest_path}")
    return deployments, problems


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_features(table: FeatureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_COLUMNS)
        for i, dep_id in enumerate(table.ids):
            writer.writerow(
                [dep_id, _fmt(table.summary[i, 0]), _fmt(table.summary[i, 1])]
                + [_fmt(v) for v in table.bins[i]]
                + [int(table.labels[i])]
            )


def read_features(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_COLUMNS:
            raise DataError(f"{path}: unexpected features header")
        ids, summary, bins, labels = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FEATURE_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(FEATURE_COLUMNS)} fields")
            try:
                values = [float(v) for v in row[1:-1]]
                label = int(row[-1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            if label not in (1, 2, 3, 4):
                raise DataError(f"{path}:{lineno}: class_label {label} not in 1-4")
            ids.append(row[0])
            summary.append(values[:2])
            bins.append(values[2:])
            labels.append(label)
    if not ids:
        raise EmptyCorpus(f"{path}: no feature rows")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate deployment ids")
    return FeatureTable(ids, np.array(summary), np.array(bins), np.array(labels))


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.15
    validation_fraction: float = 0.15  # of what remains after the test split
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("test_fraction", "validation_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def _allocate(counts: np.ndarray, total: int, at_least_one: bool) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` over class ``counts``."""
    n = counts.sum()
    quota = counts * total / n
    alloc = np.floor(quota).astype(int)
    order = np.argsort(-(quota - alloc), kind="stable")
    for i in order[: total - alloc.sum()]:
        alloc[i] += 1
    # only satisfiable when there are at least as many slots as classes
    if at_least_one and total >= counts.size:
        for i in np.flatnonzero(alloc == 0):
            surplus = np.where(alloc > 1, alloc - quota, -np.inf)
            donor = int(np.argmax(surplus))
            alloc[donor] -= 1
            alloc[i] = 1
    return alloc


def split(table: FeatureTable, spec: SplitSpec = SplitSpec()):
    """Split into ``(train, validation, test)`` tables.

    ``|test| = round(f_test * N)`` and ``|validation| = round(f_val * (N - |test|))``
    with halves rounded up. Stratified splits apportion each subset over the
    classes by largest remainder, so per-class sizes are within one sample of
    proportional. A subset with at least as many rows as there are classes
    then gets at least one row of every class, taken from the class furthest
    above its quota.
    """
    n = len(table)
    if n == 0:
        raise EmptyCorpus("cannot split an empty table")
    if len(set(table.ids)) != n:
        raise DataError("deployment ids must be unique")
    n_test = int(round_half_up(spec.test_fraction * n))
    n_val = int(round_half_up(spec.validation_fraction * (n - n_test)))
    rng = np.random.default_rng(spec.seed)

    if not spec.stratified:
        perm = rng.permutation(n)
        test, val, train = perm[:n_test], perm[n_test : n_test + n_val], perm[n_test + n_val :]
    else:
        classes, counts = np.unique(table.labels, return_counts=True)
        small = classes[counts < 3]
        if small.size:
            raise ClassTooSmall(
                f"class(es) {', '.join(map(str, small))} have fewer than 3 members"
            )
        test_alloc = _allocate(counts, n_test, True)
        val_alloc = _allocate(counts - test_alloc, n_val, True)
        test, val, train = [], [], []
        for c, a, b in zip(classes, test_alloc, val_alloc):
            members = rng.permutation(np.flatnonzero(table.labels == c))
            test.append(members[:a])
            val.append(members[a : a + b])
            train.append(members[a + b :])
        test, val, train = (np.concatenate(x) for x in (test, val, train))
    return tuple(table.take(np.sort(part)) for part in (train, val, test))


# -- scaling -----------------------------------------------------------------


@dataclass(frozen=True)
class ScalerParams:
    summary_mean: np.ndarray
    summary_std: np.ndarray
    bins_mean: np.ndarray
    bins_std: np.ndarray

    def scale_summary(self, x):
        return (np.asarray(x, dtype=float) - self.summary_mean) / self.summary_std

    def scale_bins(self, x):
        return (np.asarray(x, dtype=float) - self.bins_mean) / self.bins_std


def _moments(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def fit_scaler(train: FeatureTable) -> ScalerParams:
    """Z-score parameters (population standard deviation) from training rows only."""
    if len(train) == 0:
        raise EmptyCorpus("cannot fit a scaler on an empty table")
    return ScalerParams(*_moments(train.summary), *_moments(train.bins))


def apply_scaler(params: ScalerParams, table: FeatureTable) -> FeatureTable:
    return FeatureTable(
        list(table.ids),
        params.scale_summary(table.summary),
        params.scale_bins(table.bins),
        table.labels.copy(),
    )


# -- rebalancing -------------------------------------------------------------


@dataclass
class AdasynResult:
    X: np.ndarray
    y: np.ndarray
    parents: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    """(n_synthetic, 2) row indices into the input for each synthetic row."""


def _pairwise_sq_dist(X):
    sq = np.einsum("ij,ij->i", X, X)
    d = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(d, 0.0, out=d)
    return d


def adasyn(X, y, k=5, beta=1.0, seed=0, return_parents=False):
    """Adaptive synthetic oversampling.

    Each class smaller than the largest is treated as a minority against all
    other classes. The number of synthetics ``G = (m_max - m_c) * beta`` is
    spread over minority rows in proportion to the share of other-class rows
    among their ``k`` nearest neighbours; each synthetic row interpolates
    between a minority row and one of its ``k`` nearest same-class rows.
    Original rows come first in the output, in input order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    m_max = counts.max()
    d2 = None

    new_X, new_y, parents = [X], [y], []
    for c, m_c in zip(classes, counts):
        if m_c == m_max:
            continue
        G = (m_max - m_c) * beta
        if round_half_up(G) <= 0:
            continue
        if m_c < k + 1:
            raise TooFewNeighbors(f"class {c} has {m_c} rows, needs at least k+1 = {k + 1}")
        if d2 is None:
            d2 = _pairwise_sq_dist(X)
        members = np.flatnonzero(y == c)

        dist = d2[members].copy()
        dist[np.arange(m_c), members] = np.inf
        nn_all = np.argsort(dist, axis=1, kind="stable")[:, :k]
        ratio = (y[nn_all] != c).sum(axis=1) / k
        if ratio.sum() > 0:
            weights = ratio / ratio.sum()
        else:
            weights = np.full(m_c, 1.0 / m_c)
        g = round_half_up(weights * G)

        dist_c = d2[np.ix_(members, members)].copy()
        np.fill_diagonal(dist_c, np.inf)
        nn_same = np.argsort(dist_c, axis=1, kind="stable")[:, :k]

        base = np.repeat(np.arange(m_c), g)
        if base.size == 0:
            continue
        pick = rng.integers(0, k, size=base.size)
        lam = rng.random(base.size)[:, None]
        i_rows = members[base]
        z_rows = members[nn_same[base, pick]]
        new_X.append(X[i_rows] + lam * (X[z_rows] - X[i_rows]))
        new_y.append(np.full(base.size, c, dtype=y.dtype))
        parents.append(np.column_stack([i_rows, z_rows]))

    result = AdasynResult(
        np.concatenate(new_X),
        np.concatenate(new_y),
        np.concatenate(parents) if parents else np.zeros((0, 2), dtype=int),
    )
    if return_parents:
        return result
    return result.X, result.y


def random_oversample(X, y, seed=0):
    """Duplicate random minority rows until every class matches the largest.

    Returns ``(X, y, source_index)`` where ``source_index`` maps each output row
    to its input row.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyCorpus("cannot oversample an empty set")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    m_max = counts.max()
    index = [np.arange(y.size)]
    for c, m_c in zip(classes, counts):
        if m_c < m_max:
            members = np.flatnonzero(y == c)
            index.append(members[rng.integers(0, m_c, size=m_max - m_c)])
    index = np.concatenate(index)
    return X[index], y[index], index
