"""Datasets: feature/label containers, splits, synthetic blobs, file formats.

Features are float64 in memory and single precision on disk ("BHF1" binary
format, or CSV for small fixtures); loading widens them back. Every row may
carry one of three roles (train, database, query) assigned by the split
protocol; roles are disjoint and query rows never appear in the database.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, LabelError
from .linalg import RngStream

FEATURES_MAGIC = b"BHF1"

ROLE_TRAIN = 0
ROLE_DATABASE = 1
ROLE_QUERY = 2
ROLE_NAMES = {ROLE_TRAIN: "train", ROLE_DATABASE: "database", ROLE_QUERY: "query"}
ROLE_CODES = {name: code for code, name in ROLE_NAMES.items()}


@dataclass
class Dataset:
    """Feature matrix plus labels, with an optional role per row.

    Labels are either a 1-D array of class indices (single-label mode) or a
    2-D multi-hot array (multi-label mode).
    """

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError(
                f"features must be 2-D, got shape {self.features.shape}"
            )
        self.labels = np.asarray(self.labels)
        if self.labels.ndim == 1:
            self.labels = self.labels.astype(np.int64)
        elif self.labels.ndim == 2:
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise LabelError("multi-hot labels must contain only 0/1")
            self.labels = self.labels.astype(np.uint8)
        else:
            raise LabelError(f"labels must be 1-D or 2-D, got {self.labels.ndim}-D")
        if len(self.labels) != self.n:
            raise DimensionError("labels do not match the number of rows")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=np.int8)
            if self.split.shape != (self.n,):
                raise DimensionError("split does not match the number of rows")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_mode(self) -> str:
        return "single" if self.labels.ndim == 1 else "multi"

    @property
    def n_classes(self) -> int:
        if self.label_mode == "single":
            return int(self.labels.max()) + 1 if self.n else 0
        return self.labels.shape[1]

    def rows(self, role) -> np.ndarray:
        """Indices of the rows assigned to a role ("train"/"database"/"query")."""
        if self.split is None:
            raise ValueError("dataset has no split; run split_protocol first")
        code = ROLE_CODES[role] if isinstance(role, str) else int(role)
        return np.nonzero(self.split == code)[0]


@dataclass
class BlobSpec:
    """Synthetic Gaussian clusters, one per class, deterministic per seed."""

    classes: int
    dim: int
    per_class: int
    center_scale: float = 1.0
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.per_class < 1:
            raise ValueError("need at least 1 row per class")


def make_blobs(spec: BlobSpec) -> Dataset:
    """Gaussian blob dataset; rows are class-major, labels are class indices.

    Features are rounded to single precision so the on-disk format is
    lossless for generated data.
    """
    rng = RngStream(spec.seed)
    centers = rng.normal(spec.classes, spec.dim) * spec.center_scale
    features = np.repeat(centers, spec.per_class, axis=0)
    features = features + rng.normal(spec.classes * spec.per_class, spec.dim) * spec.noise_scale
    features = features.astype(np.float32).astype(np.float64)
    labels = np.repeat(np.arange(spec.classes, dtype=np.int64), spec.per_class)
    return Dataset(features=features, labels=labels)


def split_protocol(
    ds: Dataset, queries_per_class: int, train_per_class: int, seed: int
) -> Dataset:
    """Assign roles by per-class uniform sampling without replacement.

    Queries are drawn first, then the train rows from what remains; every
    other row becomes part of the retrieval database. Single-label datasets
    only.
    """
    if ds.label_mode != "single":
        raise LabelError("split protocol is defined for single-label datasets")
    if queries_per_class < 0 or train_per_class < 0:
        raise ValueError("per-class counts must be >= 0")
    rng = RngStream(seed)
    split = np.full(ds.n, ROLE_DATABASE, dtype=np.int8)
    for cls in np.unique(ds.labels):
        idx = np.nonzero(ds.labels == cls)[0]
        need = queries_per_class + train_per_class
        if need > len(idx):
            raise ValueError(
                f"class {cls} has {len(idx)} rows, cannot draw "
                f"{queries_per_class} queries + {train_per_class} train rows"
            )
        picked = idx[rng.permutation(len(idx))[:need]]
        split[picked[:queries_per_class]] = ROLE_QUERY
        split[picked[queries_per_class:]] = ROLE_TRAIN
    return Dataset(features=ds.features, labels=ds.labels, split=split)


def standardize_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation; zero spreads clamp to 1."""
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    return mean, scale


def save_dataset(ds: Dataset, path) -> None:
    """Write the "BHF1" binary format (little-endian).

    Layout: magic "BHF1"; u32 n; u32 d; u8 label mode (0 single, 1 multi);
    label payload (single: n * i32; multi: u32 width then n*width * u8);
    then n*d float32 features, row-major. Splits are not persisted.
    """
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<II", ds.n, ds.dim))
        if ds.label_mode == "single":
            fh.write(struct.pack("<B", 0))
            fh.write(ds.labels.astype("<i4").tobytes())
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<I", ds.labels.shape[1]))
            fh.write(ds.labels.astype(np.uint8).tobytes())
        fh.write(ds.features.astype("<f4").tobytes())


def _take(raw: bytes, offset: int, size: int, what: str) -> int:
    if len(raw) < offset + size:
        raise FormatError(f"truncated file while reading {what}", offset=len(raw))
    return offset + size


def load_dataset(path) -> Dataset:
    """Load a "BHF1" file, or a CSV fixture when the path ends in .csv."""
    if str(path).endswith(".csv"):
        return load_dataset_csv(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FEATURES_MAGIC:
        raise FormatError(
            f"bad magic {raw[:4]!r}, expected {FEATURES_MAGIC!r}", offset=0
        )
    offset = _take(raw, 4, 9, "header")
    n, d, mode = struct.unpack_from("<IIB", raw, 4)
    if mode == 0:
        end = _take(raw, offset, 4 * n, "labels")
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=offset).astype(np.int64)
        offset = end
    elif mode == 1:
        offset = _take(raw, offset, 4, "label width")
        (width,) = struct.unpack_from("<I", raw, offset - 4)
        end = _take(raw, offset, n * width, "labels")
        labels = np.frombuffer(raw, dtype=np.uint8, count=n * width, offset=offset)
        labels = labels.reshape(n, width)
        offset = end
    else:
        raise FormatError(f"unknown label mode {mode}", offset=12)
    _take(raw, offset, 4 * n * d, "features")
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset)
    return Dataset(features=features.reshape(n, d).astype(np.float64), labels=labels)


def load_dataset_csv(path) -> Dataset:
    """CSV fixture: header f0,...,f{d-1},label or f0,...,f{d-1},y0,...,y{c-1}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file", offset=0) from None
        header = [h.strip() for h in header]
        n_features = sum(1 for h in header if h.startswith("f"))
        if n_features == 0:
            raise FormatError("CSV header has no f* feature columns", offset=0)
        trailing = header[n_features:]
        if trailing == ["label"]:
            mode = "single"
        elif trailing and all(h.startswith("y") for h in trailing):
            mode = "multi"
        else:
            raise FormatError(
                f"CSV header must end in 'label' or y* columns, got {trailing}",
                offset=0,
            )
        feats, labels = [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"CSV row {row_num} has {len(row)} fields", offset=0)
            feats.append([np.float32(v) for v in row[:n_features]])
            if mode == "single":
                labels.append(int(row[n_features]))
            else:
                labels.append([int(v) for v in row[n_features:]])
    features = np.asarray(feats, dtype=np.float64)
    return Dataset(features=features, labels=np.asarray(labels))


def save_labels_csv(labels, path) -> None:
    """One line per row: a class index, or a multi-hot 0/1 row."""
    labels = np.asarray(labels)
    with open(path, "w") as fh:
        if labels.ndim == 1:
            fh.write("label\n")
            for v in labels:
                fh.write(f"{int(v)}\n")
        else:
            fh.write(",".join(f"y{i}" for i in range(labels.shape[1])) + "\n")
            for row in labels:
                fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_labels_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty labels file", offset=0) from None
        rows = [row for row in reader if row]
    if header == ["label"]:
        return np.asarray([int(r[0]) for r in rows], dtype=np.int64)
    if header and all(h.startswith("y") for h in header):
        return np.asarray([[int(v) for v in r] for r in rows], dtype=np.uint8)
    raise FormatError(f"unrecognized labels header {header}", offset=0)
