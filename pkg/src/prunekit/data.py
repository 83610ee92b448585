"""Dataset ingestion: synthetic generators, IDX and CSV readers, splits.

Synthetic sets are desk-scale stand-ins for image benchmarks: ``blobs`` is an
easy (linearly separable for small noise) sanity task, ``two_spirals`` is a
hard task where pruning damage shows up clearly in accuracy.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGE_MAGIC = 2051  # 0x00000803: ubyte, 3 dims
IDX_LABEL_MAGIC = 2049  # 0x00000801: ubyte, 1 dim

SYNTHETIC_KINDS = ("blobs", "two_spirals")
NORMALIZATIONS = ("none", "per_feature_standardize")


class IdxFormatError(ValueError):
    """Malformed IDX file; message includes the offending byte offset."""


@dataclass
class Dataset:
    """Realized train/eval split, features float64 and labels int64."""

    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.train_y.max(), self.eval_y.max())) + 1

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.train_x.shape[1:])


@dataclass(frozen=True)
class SyntheticSource:
    kind: str
    n_samples: int = 1000
    n_classes: int = 2
    noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"synthetic kind must be one of {SYNTHETIC_KINDS}, got {self.kind!r}")
        if self.n_samples < 2 or self.n_classes < 2:
            raise ValueError("need n_samples >= 2 and n_classes >= 2")


@dataclass(frozen=True)
class IdxSource:
    images_path: str
    labels_path: str


@dataclass(frozen=True)
class CsvSource:
    path: str
    label_column: str


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class DatasetSpec:
    source: SyntheticSource | IdxSource | CsvSource
    normalization: str = "none"
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )


def make_blobs(n_samples, n_classes, noise, seed):
    """Gaussian clusters around class centers evenly spaced on a circle."""
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.arange(n_samples) % n_classes
    x = centers[labels] + noise * rng.standard_normal((n_samples, 2))
    return x, labels.astype(np.int64)


def make_two_spirals(n_samples, n_classes, noise, seed):
    """Interleaved spirals, one per class, rotated evenly around the origin."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % n_classes
    t = rng.uniform(0.25, 1.0, size=n_samples)
    radius = 4.0 * t
    angle = 3.0 * np.pi * t + 2.0 * np.pi * labels / n_classes
    x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    x += noise * rng.standard_normal((n_samples, 2))
    return x, labels.astype(np.int64)


def _read_exact(fh, n, what, offset):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxFormatError(f"truncated {what} at byte offset {offset}: "
                             f"wanted {n} bytes, got {len(buf)}")
    return buf


def _read_idx_ubyte(path, expected_magic, expected_ndim):
    with open(path, "rb") as fh:
        magic = struct.unpack(">i", _read_exact(fh, 4, "magic", 0))[0]
        if magic != expected_magic:
            raise IdxFormatError(
                f"bad magic at byte offset 0: expected {expected_magic}, got {magic}"
            )
        dims = []
        for i in range(expected_ndim):
            offset = 4 + 4 * i
            dims.append(struct.unpack(">i", _read_exact(fh, 4, "dimension", offset))[0])
        if any(d <= 0 for d in dims):
            raise IdxFormatError(f"nonpositive dimension in header: {dims}")
        count = int(np.prod(dims))
        payload_offset = 4 + 4 * expected_ndim
        payload = fh.read()
    if len(payload) != count:
        raise IdxFormatError(
            f"payload length mismatch at byte offset {payload_offset}: header "
            f"dims {dims} imply {count} bytes, file holds {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair.

    Images come back as float64 in [0, 1] with an explicit channel axis,
    shape (n, 1, rows, cols); labels as int64 class indices.
    """
    images = _read_idx_ubyte(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx_ubyte(labels_path, IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    x = images.astype(np.float64) / 255.0
    return x[:, None, :, :], labels.astype(np.int64)


def load_csv(path, label_column):
    """Numeric CSV with a header row; one column holds integer class labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        xs, ys = [], []
        for row in reader:
            ys.append(int(float(row[label_idx])))
            xs.append([float(v) for i, v in enumerate(row) if i != label_idx])
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.int64)


def _load_source(source):
    if isinstance(source, SyntheticSource):
        maker = make_blobs if source.kind == "blobs" else make_two_spirals
        return maker(source.n_samples, source.n_classes, source.noise, source.seed)
    if isinstance(source, IdxSource):
        return load_idx(source.images_path, source.labels_path)
    if isinstance(source, CsvSource):
        return load_csv(source.path, source.label_column)
    raise TypeError(f"unknown dataset source {type(source).__name__}")


def _validate_labels(y):
    classes = np.unique(y)
    expected = np.arange(classes.size)
    if not np.array_equal(classes, expected):
        raise ValueError(f"labels must be dense in [0, n_classes); found {classes.tolist()}")


def realize(spec: DatasetSpec) -> Dataset:
    """Load, split, and normalize a dataset spec into arrays."""
    x, y = _load_source(spec.source)
    _validate_labels(y)
    n = x.shape[0]
    order = np.random.default_rng(spec.split.seed).permutation(n)
    n_train = max(1, min(n - 1, int(round(spec.split.train_fraction * n))))
    train_idx, eval_idx = order[:n_train], order[n_train:]
    train_x, eval_x = x[train_idx].copy(), x[eval_idx].copy()
    train_y, eval_y = y[train_idx].copy(), y[eval_idx].copy()
    if spec.normalization == "per_feature_standardize":
        axis = 0
        mean = train_x.mean(axis=axis, keepdims=True)
        std = train_x.std(axis=axis, keepdims=True)
        std[std == 0.0] = 1.0
        train_x = (train_x - mean) / std
        eval_x = (eval_x - mean) / std
    return Dataset(train_x, train_y, eval_x, eval_y)
