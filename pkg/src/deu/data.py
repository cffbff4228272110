"""Datasets: IDX (MNIST-style) files, labelled CSV, and 2-D synthetic problems."""

from __future__ import annotations

import csv
import gzip
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

log = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


class DataFormatError(ValueError):
    pass


class WrongMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Normalization:
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.shift


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalization: Optional[Normalization] = None
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataFormatError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError("label outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise DataFormatError("non-finite feature value")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# IDX


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx(buf: bytes, expected_magic: int, path) -> np.ndarray:
    if len(buf) < 8:
        raise TruncatedFileError(f"{path}: header truncated")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != expected_magic:
        raise WrongMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    if magic == IMAGES_MAGIC:
        if len(buf) < 16:
            raise TruncatedFileError(f"{path}: header truncated")
        rows, cols = struct.unpack(">II", buf[8:16])
        shape, offset = (count, rows * cols), 16
    else:
        shape, offset = (count,), 8
    need = int(np.prod(shape))
    if len(buf) - offset < need:
        raise TruncatedFileError(f"{path}: expected {need} payload bytes, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset).reshape(shape)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (raw or gzip); pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_maybe_gzip(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_maybe_gzip(labels_path), LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    # digit/garment sets always have 10 classes even if a small file misses some
    num_classes = max(10, int(labels.max()) + 1 if labels.size else 0)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path,
              compress: bool = False) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    opener = gzip.compress if compress else (lambda b: b)
    Path(images_path).write_bytes(opener(img))
    Path(labels_path).write_bytes(opener(lab))


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, label_column, normalization: Optional[Normalization] = None,
             class_names: Optional[list] = None) -> Dataset:
    """Numeric CSV with a header row.

    Features are standardized per column; pass the ``normalization`` and
    ``class_names`` of a training set to load a matching test set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        if isinstance(label_column, str) and label_column in header:
            li = header.index(label_column)
        else:
            try:
                li = int(label_column)
            except ValueError:
                raise DataFormatError(f"{path}: no column {label_column!r}") from None
        rows = []
        raw_labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
            raw_labels.append(row[li].strip())
            try:
                rows.append([float(v) for j, v in enumerate(row) if j != li])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature ({exc})") from None

    names = list(class_names) if class_names else []
    index = {name: i for i, name in enumerate(names)}
    labels = []
    for name in raw_labels:
        if name not in index:
            if class_names:
                raise DataFormatError(f"{path}: label {name!r} not seen in training data")
            index[name] = len(names)
            names.append(name)
        labels.append(index[name])
    if len(names) < 2:
        log.warning("%s: only one class present", path)

    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if normalization is None:
        shift = x.mean(axis=0) if len(x) else np.zeros(x.shape[1])
        scale = x.std(axis=0) if len(x) else np.ones(x.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        normalization = Normalization(shift, scale)
    return Dataset(normalization.apply(x), np.array(labels, dtype=np.int64), max(len(names), 1),
                   normalization, names)


# ---------------------------------------------------------------------------
# synthetic


def make_synthetic(kind: str, n: int, noise: float, seed: int) -> Dataset:
    """Two-class 2-D problems: ``moons``, ``circles`` or ``spirals``."""
    if n < 4:
        raise ValueError("n must be at least 4")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    if kind == "moons":
        t0 = np.linspace(0, math.pi, n0)
        t1 = np.linspace(0, math.pi, n1)
        x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        x1 = np.stack([1 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    elif kind == "circles":
        t0 = np.linspace(0, 2 * math.pi, n0, endpoint=False)
        t1 = np.linspace(0, 2 * math.pi, n1, endpoint=False)
        x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        x1 = 0.5 * np.stack([np.cos(t1), np.sin(t1)], axis=1)
    elif kind == "spirals":
        def arm(m, phase):
            r = np.linspace(0.05, 1.0, m)
            theta = 3 * math.pi * r + phase
            return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        x0, x1 = arm(n0, 0.0), arm(n1, math.pi)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    x = np.concatenate([x0, x1]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2)


# ---------------------------------------------------------------------------
# batching


class BatchIterator:
    """Seeded mini-batches; epoch ``e`` uses the permutation from ``(seed, e)``."""

    def __init__(self, dataset: Dataset, batch_size: int, seed: int, drop_singleton: bool = False):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.drop_singleton = drop_singleton
        self.epoch = 0

    def permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        order = self.permutation(self.epoch)
        self.epoch += 1
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            if len(idx) == 1 and self.drop_singleton:
                log.info("dropping final batch of size 1 (batch norm needs at least 2 samples)")
                continue
            yield self.dataset.features[idx], self.dataset.labels[idx]

    def __len__(self) -> int:
        n = len(self.dataset)
        full = math.ceil(n / self.batch_size)
        if self.drop_singleton and n % self.batch_size == 1:
            full -= 1
        return full
