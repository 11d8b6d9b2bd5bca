"""Datasets: synthetic moons, CSV ingestion, standardization, splits, batching."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MISSING = frozenset({"", "?", "na", "n/a", "nan", "null", "none"})

# Ring-count classes for Abalone: small 1-8, medium 9-10, large 11-29.
ABALONE_BINS = (("small", 1, 8), ("medium", 9, 10), ("large", 11, 29))
# Absenteeism hours: A 0, B 1-16, C 17-56, D above 56.
ABSENTEEISM_BINS = (("A", 0, 0), ("B", 1, 16), ("C", 17, 56), ("D", 57, None))


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple | None = None
    standardization: Standardization | None = None
    feature_names: tuple | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if y.shape != (x.shape[0],):
            raise DataError("need exactly one label per row")
        if x.shape[0] < 1:
            raise DataError("dataset is empty")
        if not np.isfinite(x).all():
            raise DataError("features contain non-finite values")
        if y.min() < 0:
            raise DataError("labels must be non-negative class ids")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        return int(self.labels.max()) + 1

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


def generate_moons(n: int = 1000, noise_std: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles.

    Class 0 lies on the upper unit semicircle, class 1 on the lower one
    shifted by (1, -0.5). Angles are drawn uniformly; isotropic Gaussian
    noise is added afterwards. Class 0 gets ``n // 2`` points.
    """
    if n < 2:
        raise DataError("need at least two points")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], class_names=("0", "1"), feature_names=("x0", "x1"))


def _bin_value(value: float, bins) -> int:
    for i, (_, lo, hi) in enumerate(bins):
        if (lo is None or value >= lo) and (hi is None or value <= hi):
            return i
    raise DataError(f"label value {value} falls outside every bin")


def load_csv(
    path,
    label_column=-1,
    header: bool = True,
    categorical: dict | None = None,
    label_bins=None,
    drop_columns=(),
) -> Dataset:
    """Read a numeric CSV into a :class:`Dataset`.

    ``label_column`` is a column name (requires ``header``) or an integer
    index. ``categorical`` maps feature columns to ``"onehot"`` or
    ``"integer"`` encoding; codes follow first appearance. Without
    ``label_bins`` the label values map to class ids in first-appearance
    order; with bins (a sequence of ``(name, lo, hi)`` inclusive ranges, open
    ends as ``None``) a numeric label is mapped to its bin index.

    Rows with a missing cell are dropped and counted in the log.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header:
        if not rows:
            raise DataError(f"{path} is empty")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    else:
        names = [str(i) for i in range(len(rows[0]))] if rows else []
    if not rows:
        raise DataError(f"{path} has no data rows")
    ncol = len(names)
    for lineno, r in enumerate(rows, start=2 if header else 1):
        if len(r) != ncol:
            raise DataError(f"{path}:{lineno}: expected {ncol} cells, found {len(r)}")

    def resolve(col):
        if isinstance(col, int):
            if not -ncol <= col < ncol:
                raise DataError(f"column index {col} out of range")
            return col % ncol
        if col in names:
            return names.index(col)
        if str(col).lstrip("-").isdigit():
            return resolve(int(col))
        raise DataError(f"unknown column {col!r}")

    label_idx = resolve(label_column)
    dropped = {resolve(c) for c in drop_columns}
    enc = {resolve(c): kind for c, kind in (categorical or {}).items()}
    for kind in enc.values():
        if kind not in ("onehot", "integer"):
            raise DataError(f"unknown categorical encoding {kind!r}")

    kept = [r for r in rows
            if not any(r[j].strip().lower() in MISSING for j in range(ncol) if j not in dropped)]
    n_missing = len(rows) - len(kept)
    if n_missing:
        log.info("dropped %d of %d rows with missing values", n_missing, len(rows))
    if not kept:
        raise DataError(f"{path}: no rows left after dropping missing values")

    feature_cols = [j for j in range(ncol) if j != label_idx and j not in dropped]
    columns, feature_names = [], []
    for j in feature_cols:
        cells = [r[j].strip() for r in kept]
        if j in enc:
            levels = list(dict.fromkeys(cells))
            codes = np.array([levels.index(c) for c in cells], dtype=np.float64)
            if enc[j] == "integer":
                columns.append(codes)
                feature_names.append(names[j])
            else:
                for k, level in enumerate(levels):
                    columns.append((codes == k).astype(np.float64))
                    feature_names.append(f"{names[j]}={level}")
            continue
        try:
            columns.append(np.array([float(c) for c in cells]))
        except ValueError as exc:
            raise DataError(f"column {names[j]!r} has a non-numeric cell ({exc}); "
                            "declare it categorical") from exc
        feature_names.append(names[j])

    raw_labels = [r[label_idx].strip() for r in kept]
    if label_bins:
        bins = tuple(tuple(b) for b in label_bins)
        try:
            values = [float(v) for v in raw_labels]
        except ValueError as exc:
            raise DataError(f"label binning needs numeric labels: {exc}") from exc
        labels = [_bin_value(v, bins) for v in values]
        class_names = tuple(str(b[0]) for b in bins)
    else:
        levels = list(dict.fromkeys(raw_labels))
        labels = [levels.index(v) for v in raw_labels]
        class_names = tuple(levels)

    x = np.column_stack(columns) if columns else np.zeros((len(kept), 0))
    if x.shape[1] == 0:
        raise DataError(f"{path}: no feature columns")
    return Dataset(x, np.array(labels), class_names=class_names,
                   feature_names=tuple(feature_names), dropped_rows=n_missing)


def fit_standardization(d: Dataset) -> Standardization:
    if len(d) < 2:
        raise DataError("standardization needs at least two rows")
    return Standardization(mean=d.features.mean(axis=0), std=d.features.std(axis=0))


def standardize(d: Dataset, stats: Standardization | None = None) -> Dataset:
    """Zero-mean, unit-variance features.

    Statistics come from ``stats`` when given (fit them on the training
    split and reuse them for the test split); otherwise from ``d`` itself.
    Constant columns become zeros.
    """
    stats = stats or fit_standardization(d)
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return replace(d, features=(d.features - stats.mean) / safe, standardization=stats)


def unstandardize(d: Dataset) -> Dataset:
    if d.standardization is None:
        return d
    s = d.standardization
    safe = np.where(s.std > 0, s.std, 1.0)
    return replace(d, features=d.features * safe + s.mean, standardization=None)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie in (0, 1)")


def _largest_remainder(counts, fraction, total):
    exact = np.asarray(counts, dtype=np.float64) * fraction
    alloc = np.floor(exact).astype(int)
    order = np.argsort(-(exact - alloc), kind="stable")
    for k in order[: total - alloc.sum()]:
        alloc[k] += 1
    return alloc


def split(d: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Shuffled train/test split; stratified splits keep per-class ratios to within one row."""
    n = len(d)
    if n < 2:
        raise DataError("need at least two rows to split")
    rng = np.random.default_rng(spec.seed)
    n_train = min(max(int(round(spec.train_fraction * n)), 1), n - 1)
    if not spec.stratified:
        perm = rng.permutation(n)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
    else:
        classes = np.unique(d.labels)
        groups = [rng.permutation(np.flatnonzero(d.labels == c)) for c in classes]
        alloc = _largest_remainder([len(g) for g in groups], spec.train_fraction, n_train)
        train_idx = np.concatenate([g[:k] for g, k in zip(groups, alloc)])
        test_idx = np.concatenate([g[k:] for g, k in zip(groups, alloc)])
        train_idx = rng.permutation(train_idx)
        test_idx = rng.permutation(test_idx)
    return d.subset(train_idx), d.subset(test_idx)


def batches(d: Dataset, batch_size: int, rng=None):
    """Yield ``(x, y)`` mini-batches covering every row once, in shuffled order.

    ``rng`` is a :class:`numpy.random.Generator` or a seed. The last batch
    may be short; a ``batch_size`` above ``len(d)`` gives a single batch.
    """
    if batch_size < 1:
        raise DataError("batch_size must be at least 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    perm = rng.permutation(len(d))
    for start in range(0, len(d), batch_size):
        idx = perm[start:start + batch_size]
        yield d.features[idx], d.labels[idx]
