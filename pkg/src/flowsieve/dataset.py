"""Labeled flow datasets: CSV loading, scaling, splits, synthetic generation."""

from __future__ import annotations

import csv
import ipaddress
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DataError
from .flow_meter import FEATURE_COLUMNS, format_cell

CLASS_NAMES = ("NonTor", "Tor")
LABEL_TO_ID = {"nontor": 0, "tor": 1}

# Column names as published with the UNB-CIC Tor traffic CSVs.
UNB_CIC_ALIASES = {
    "Source IP": "src_ip",
    "Source Port": "src_port",
    "Destination IP": "dst_ip",
    "Destination Port": "dst_port",
    "Protocol": "protocol",
    "Flow Duration": "flow_duration",
    "Flow Bytes/s": "flow_bytes_per_s",
    "Flow Packets/s": "flow_packets_per_s",
    "Flow IAT Mean": "flow_iat_mean",
    "Flow IAT Std": "flow_iat_std",
    "Flow IAT Max": "flow_iat_max",
    "Flow IAT Min": "flow_iat_min",
    "Fwd IAT Mean": "fwd_iat_mean",
    "Fwd IAT Std": "fwd_iat_std",
    "Fwd IAT Max": "fwd_iat_max",
    "Fwd IAT Min": "fwd_iat_min",
    "Bwd IAT Mean": "bwd_iat_mean",
    "Bwd IAT Std": "bwd_iat_std",
    "Bwd IAT Max": "bwd_iat_max",
    "Bwd IAT Min": "bwd_iat_min",
    "Active Mean": "active_mean",
    "Active Std": "active_std",
    "Active Max": "active_max",
    "Active Min": "active_min",
    "Idle Mean": "idle_mean",
    "Idle Std": "idle_std",
    "Idle Max": "idle_max",
    "Idle Min": "idle_min",
    "Label": "label",
}

_IP_COLUMNS = ("src_ip", "dst_ip")


@dataclass
class Dataset:
    """Immutable-by-convention feature matrix with integer class labels."""

    schema: tuple[str, ...]
    X: np.ndarray  # (N, n) float64
    y: np.ndarray  # (N,) int
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("feature matrix and labels disagree on N")
        if self.X.shape[1] != len(self.schema):
            raise ValueError("schema width does not match feature matrix")
        if self.X.shape[0] < 1:
            raise DataError("dataset has no examples")

    @property
    def n_examples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.X[indices], self.y[indices], self.class_names)

    def select_features(self, names: Iterable[str]) -> "Dataset":
        """Project columns by name; unknown names raise DataError."""
        names = list(names)
        missing = [n for n in names if n not in self.schema]
        if missing:
            raise DataError(f"features not in dataset: {', '.join(missing)}")
        cols = [self.schema.index(n) for n in names]
        return Dataset(tuple(names), self.X[:, cols], self.y, self.class_names)


def _normalize_header(cells: list[str]) -> list[str]:
    names = []
    for cell in cells:
        cell = cell.strip()
        names.append(UNB_CIC_ALIASES.get(cell, cell))
    return names


def load_flow_csv(path, bad_value_policy: str = "error") -> Dataset:
    """Load a labeled flow CSV into a Dataset.

    Columns must be canonical feature names (or their published UNB-CIC
    aliases) with "label" last. Labels are matched case-insensitively.
    bad_value_policy controls rows with non-finite cells: "error" (default)
    or "drop" (skip the row; the published dataset contains Infinity rates).
    """
    if bad_value_policy not in ("error", "drop"):
        raise ValueError(f"unknown bad_value_policy {bad_value_policy!r}")
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = _normalize_header(next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[-1].lower() != "label":
            raise DataError(f"{path}: last column must be 'label', got {header[-1]!r}")
        feature_names = tuple(header[:-1])
        unknown = [n for n in feature_names if n not in FEATURE_COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown feature columns: {', '.join(unknown)}")
        if len(set(feature_names)) != len(feature_names):
            raise DataError(f"{path}: duplicate feature columns")
        width = len(header)
        rows: list[list[float]] = []
        labels: list[int] = []
        for row_number, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != width:
                raise DataError(
                    f"{path}: expected {width} columns at row {row_number}, "
                    f"got {len(cells)}")
            values = []
            bad = False
            for col, (name, cell) in enumerate(zip(feature_names, cells), start=1):
                cell = cell.strip()
                try:
                    value = float(cell)
                except ValueError:
                    if name in _IP_COLUMNS:
                        try:
                            value = float(int(ipaddress.IPv4Address(cell)))
                        except (ipaddress.AddressValueError, ValueError):
                            raise DataError(
                                f"{path}: row {row_number} column {col} ({name}): "
                                f"non-numeric cell {cell!r}") from None
                    else:
                        raise DataError(
                            f"{path}: row {row_number} column {col} ({name}): "
                            f"non-numeric cell {cell!r}") from None
                if not math.isfinite(value):
                    if bad_value_policy == "drop":
                        bad = True
                        break
                    raise DataError(
                        f"{path}: row {row_number} column {col} ({name}): "
                        f"non-finite value {cell!r}")
                values.append(value)
            if bad:
                continue
            raw_label = cells[-1].strip()
            label_id = LABEL_TO_ID.get(raw_label.lower())
            if label_id is None:
                raise DataError(
                    f"{path}: row {row_number}: unknown label {raw_label!r}")
            rows.append(values)
            labels.append(label_id)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(feature_names, np.array(rows, dtype=np.float64),
                   np.array(labels, dtype=np.int64))


def write_csv(ds: Dataset, path) -> None:
    """Write a Dataset back out in the flow-CSV layout (schema + label)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(ds.schema + ("label",)) + "\n")
        for row, label in zip(ds.X, ds.y):
            cells = [format_cell(float(v)) for v in row]
            cells.append(ds.class_names[label])
            handle.write(",".join(cells) + "\n")


@dataclass
class SplitSpec:
    train: float = 0.7
    validation: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        ratios = (self.train, self.validation, self.test)
        if any(r <= 0 for r in ratios):
            raise ValueError("all split ratios must be positive")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")


def stratified_split_indices(y: np.ndarray,
                             spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic stratified 3-way partition of the index set.

    Per class, fractional seats left over after flooring go to the split
    with the largest remainder; remainder ties go to the split furthest
    below its global target, so class-level rounding errors cancel.
    """
    ratios = (spec.train, spec.validation, spec.test)
    classes = np.unique(y)
    for c in classes:
        if int((y == c).sum()) < 3:
            raise DataError(f"class {c} has fewer than 3 examples")
    rng = np.random.default_rng(spec.seed)
    n_total = len(y)
    global_targets = [n_total * r for r in ratios]
    assigned = [0, 0, 0]
    buckets: list[list[np.ndarray]] = [[], [], []]
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        m = len(idx)
        ideal = [m * r for r in ratios]
        counts = [int(math.floor(v)) for v in ideal]
        remainders = [v - c_ for v, c_ in zip(ideal, counts)]
        leftovers = m - sum(counts)
        deficits = [global_targets[i] - (assigned[i] + counts[i]) for i in range(3)]
        order = sorted(range(3), key=lambda i: (-remainders[i], -deficits[i], i))
        for i in order[:leftovers]:
            counts[i] += 1
        start = 0
        for i in range(3):
            buckets[i].append(idx[start:start + counts[i]])
            assigned[i] += counts[i]
            start += counts[i]
    parts = [np.sort(np.concatenate(b)) if b else np.array([], dtype=int)
             for b in buckets]
    return parts[0], parts[1], parts[2]


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    idx_train, idx_val, idx_test = stratified_split_indices(ds.y, spec)
    return ds.subset(idx_train), ds.subset(idx_val), ds.subset(idx_test)


def kfold_indices(y: np.ndarray, k: int, seed: int = 0) -> list[np.ndarray]:
    """k stratified folds: disjoint, exhaustive, class-proportional within 1."""
    if k < 2:
        raise ValueError("k must be at least 2")
    classes = np.unique(y)
    for c in classes:
        if int((y == c).sum()) < k:
            raise DataError(f"class {c} has fewer than k={k} examples")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    start = 0  # rotate the deal across classes so remainders balance out
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for offset, example in enumerate(idx):
            folds[(start + offset) % k].append(int(example))
        start = (start + len(idx)) % k
    return [np.sort(np.array(part, dtype=int)) for part in folds]


@dataclass
class Scaler:
    """Z-score parameters fit on a training split; constant columns pass through."""

    mean: np.ndarray
    std: np.ndarray
    passthrough: np.ndarray  # bool per feature

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        active = ~self.passthrough
        out[:, active] = (out[:, active] - self.mean[active]) / self.std[active]
        return out

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        active = ~self.passthrough
        out[:, active] = out[:, active] * self.std[active] + self.mean[active]
        return out


def fit_scaler(train: Dataset) -> Scaler:
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)  # population std
    passthrough = std == 0.0
    safe_std = np.where(passthrough, 1.0, std)
    return Scaler(mean=mean, std=safe_std, passthrough=passthrough)


def apply_scaler(scaler: Scaler, ds: Dataset) -> Dataset:
    return Dataset(ds.schema, scaler.transform(ds.X), ds.y, ds.class_names)


@dataclass
class SyntheticSpec:
    """Desk-scale generator: class-conditional Gaussians plus planted
    duplicate and pure-noise columns, with roles recorded for selection tests."""

    class_means: tuple[tuple[float, ...], ...]
    rows_per_class: tuple[int, ...]
    covariance: tuple[tuple[float, ...], ...] | None = None  # None = identity
    duplicates: tuple[tuple[int, float], ...] = ()  # (source index, noise eps)
    n_noise: int = 0
    noise_scale: float = 1.0
    feature_names: tuple[str, ...] | None = None

    @property
    def n_informative(self) -> int:
        return len(self.class_means[0])

    @property
    def n_features(self) -> int:
        return self.n_informative + len(self.duplicates) + self.n_noise

    def __post_init__(self):
        widths = {len(m) for m in self.class_means}
        if len(widths) != 1:
            raise ValueError("class means must share one width")
        if len(self.rows_per_class) != len(self.class_means):
            raise ValueError("rows_per_class must match the class count")
        for src, _ in self.duplicates:
            if not 0 <= src < self.n_informative:
                raise ValueError(f"duplicate source {src} out of range")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValueError("feature_names width mismatch")


def default_synthetic_spec() -> SyntheticSpec:
    """Two well-separated clusters, two planted duplicates, 22 noise columns;
    28 features total so the output matches the flow-CSV layout."""
    return SyntheticSpec(
        class_means=((0.0, 0.0, 0.0, 0.0), (4.0, 4.0, 4.0, 4.0)),
        rows_per_class=(500, 500),
        duplicates=((0, 0.05), (1, 0.05)),
        n_noise=22,
        feature_names=FEATURE_COLUMNS,
    )


def _covariance_factor(spec: SyntheticSpec) -> np.ndarray:
    m = spec.n_informative
    if spec.covariance is None:
        return np.eye(m)
    cov = np.asarray(spec.covariance, dtype=np.float64)
    if cov.shape != (m, m):
        raise DataError(f"covariance must be {m}x{m}")
    eigvals, eigvecs = np.linalg.eigh((cov + cov.T) / 2.0)
    tol = 1e-10 * max(1.0, float(eigvals.max(initial=0.0)))
    if eigvals.min() < -tol:
        raise DataError("covariance is not positive semi-definite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def generate_synthetic(spec: SyntheticSpec,
                       seed: int = 0) -> tuple[Dataset, dict[str, object]]:
    """Sample a labeled dataset; returns (dataset, ground-truth feature roles)."""
    rng = np.random.default_rng(seed)
    factor = _covariance_factor(spec)
    m = spec.n_informative
    blocks = []
    labels = []
    for class_id, (mean, rows) in enumerate(zip(spec.class_means, spec.rows_per_class)):
        z = rng.standard_normal((rows, m))
        blocks.append(z @ factor.T + np.asarray(mean))
        labels.append(np.full(rows, class_id, dtype=np.int64))
    informative = np.vstack(blocks)
    y = np.concatenate(labels)
    columns = [informative]
    for src, eps in spec.duplicates:
        col = informative[:, src] + eps * rng.standard_normal(len(y))
        columns.append(col[:, None])
    if spec.n_noise:
        columns.append(spec.noise_scale * rng.standard_normal((len(y), spec.n_noise)))
    X = np.hstack(columns)
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm]
    names = spec.feature_names or tuple(
        f"f{i:02d}" for i in range(spec.n_features))
    roles = {
        "informative": list(range(m)),
        "duplicate": list(range(m, m + len(spec.duplicates))),
        "noise": list(range(m + len(spec.duplicates), spec.n_features)),
        "duplicate_of": {m + i: src for i, (src, _) in enumerate(spec.duplicates)},
    }
    return Dataset(tuple(names), X, y), roles


def one_hot(y: np.ndarray, n_classes: int = 2) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out
