"""Desk-scale datasets: a Gaussian-mixture generator, a CSV format, and CIFAR-10 binaries.

CSV layout::

    # n_classes=<N> dim=<d>
    <f1>,...,<fd>,<label>
"""

import os
from dataclasses import dataclass

import numpy as np

from icct.errors import ConfigError, DataError
from icct.numerics import DTYPE, make_rng

TRAIN = "train"
TEST = "test"

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_BATCH_RECORDS = 10000


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = TRAIN

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"features {self.features.shape} and labels {self.labels.shape} do not line up"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx, split=None):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, split or self.split)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 10
    dim: int = 32
    train_per_class: int = 500
    test_per_class: int = 200
    center_scale: float = 3.0
    stddev: float = 1.0
    overlap_pairs: int = 2
    pair_shrink: float = 0.25  # paired centers keep this fraction of their distance
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2 (ICC needs two classes), got {self.n_classes}")
        if self.dim < 1 or self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("dim and per-class counts must be >= 1")
        if not self.stddev > 0:
            raise ConfigError(f"stddev must be > 0, got {self.stddev}")
        if self.overlap_pairs < 0 or 2 * self.overlap_pairs > self.n_classes:
            raise ConfigError(f"cannot form {self.overlap_pairs} disjoint pairs from {self.n_classes} classes")
        if not 0 <= self.pair_shrink <= 1:
            raise ConfigError("pair_shrink must lie in [0, 1]")


def class_centers(spec):
    """Centers on a sphere of radius ``center_scale``; classes (0,1), (2,3), ... are pulled together."""
    rng = make_rng(spec.seed)
    c = rng.standard_normal((spec.n_classes, spec.dim))
    c *= spec.center_scale / np.linalg.norm(c, axis=1, keepdims=True)
    for p in range(spec.overlap_pairs):
        i, j = 2 * p, 2 * p + 1
        mid = 0.5 * (c[i] + c[j])
        c[i] = mid + spec.pair_shrink * (c[i] - mid)
        c[j] = mid + spec.pair_shrink * (c[j] - mid)
    return c, rng


def _sample(centers, per_class, stddev, rng, split):
    n_classes, dim = centers.shape
    labels = np.repeat(np.arange(n_classes), per_class)
    feats = centers[labels] + stddev * rng.standard_normal((len(labels), dim))
    return Dataset(feats, labels, n_classes, split)


def gen_synthetic(spec):
    centers, rng = class_centers(spec)
    train = _sample(centers, spec.train_per_class, spec.stddev, rng, TRAIN)
    test = _sample(centers, spec.test_per_class, spec.stddev, rng, TEST)
    return train, test


def nearest_center_predict(centers, features):
    d = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


# --- CSV ---------------------------------------------------------------------

def _parse_header(line, path):
    fields = {}
    if not line.startswith("#"):
        raise DataError(f"{path}:1: missing '# n_classes=<N> dim=<d>' header")
    for tok in line[1:].split():
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        return int(fields["n_classes"]), int(fields["dim"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}:1: malformed header {line.strip()!r}") from exc


def load_csv(path, split=TRAIN):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    n_classes, dim = _parse_header(lines[0], path)
    feats, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DataError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
        try:
            row = [float(p) for p in parts[:-1]]
            label = int(parts[-1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= label < n_classes:
            raise DataError(f"{path}:{lineno}: label {label} outside [0, {n_classes})")
        if not np.all(np.isfinite(row)):
            raise DataError(f"{path}:{lineno}: non-finite feature")
        feats.append(row)
        labels.append(label)
    if not labels:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(feats, dtype=DTYPE), np.array(labels, dtype=np.int64), n_classes, split)


def write_csv(path, ds):
    with open(path, "w", newline="") as fh:
        fh.write(f"# n_classes={ds.n_classes} dim={ds.dim}\n")
        for row, label in zip(ds.features, ds.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


# --- CIFAR-10 binary -----------------------------------------------------------

def read_cifar_batch(path):
    """Raw records of one binary batch file: (labels uint8, pixels uint8 of shape (n, 3072))."""
    size = os.path.getsize(path)
    if size == 0 or size % CIFAR_RECORD:
        raise DataError(f"{path}: size {size} is not a multiple of {CIFAR_RECORD}")
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"{path}: label byte {labels.max()} > 9")
    return labels, raw[:, 1:]


def load_cifar10(directory, strict=True):
    """Flattened, per-channel standardized CIFAR-10 (train stats applied to both splits).

    With ``strict`` every file must hold exactly 10000 records.
    """
    train_files = [os.path.join(directory, f"data_batch_{i}.bin") for i in range(1, 6)]
    test_file = os.path.join(directory, "test_batch.bin")
    for f in train_files + [test_file]:
        if not os.path.exists(f):
            raise DataError(f"missing CIFAR-10 file {f}")
        if strict and os.path.getsize(f) != CIFAR_RECORD * CIFAR_BATCH_RECORDS:
            raise DataError(f"{f}: expected {CIFAR_RECORD * CIFAR_BATCH_RECORDS} bytes")
    parts = [read_cifar_batch(f) for f in train_files]
    y_tr = np.concatenate([p[0] for p in parts])
    x_tr = np.concatenate([p[1] for p in parts]).astype(DTYPE) / 255.0
    y_te, x_te = read_cifar_batch(test_file)
    x_te = x_te.astype(DTYPE) / 255.0
    x_tr, x_te = standardize_channels(x_tr, x_te)
    return Dataset(x_tr, y_tr, 10, TRAIN), Dataset(x_te, y_te, 10, TEST)


def standardize_channels(train, test, channels=3):
    """Per-channel (R, G, B planes) zero mean / unit variance using train statistics."""
    n_tr, n_te = len(train), len(test)
    tr = train.reshape(n_tr, channels, -1)
    te = test.reshape(n_te, channels, -1)
    mean = tr.mean(axis=(0, 2), keepdims=True)
    std = tr.std(axis=(0, 2), keepdims=True)
    std[std == 0] = 1.0
    return ((tr - mean) / std).reshape(n_tr, -1), ((te - mean) / std).reshape(n_te, -1)


# --- batching ----------------------------------------------------------------

def batches(ds, batch_size, rng):
    """Yield (inputs, labels) over one shuffled epoch; the last partial batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.features[idx], ds.labels[idx]


def batch_indices(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]
