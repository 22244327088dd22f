"""Synthetic Gaussian-blob datasets, view augmentation, and CSV round-trips.

All randomness comes from numpy's PCG64 generator seeded through an explicit
``SeedSequence``, so a (seed, parameters) pair pins the dataset exactly.
Ground-truth labels exist for evaluation only; training code never reads them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# SeedSequence stream tags, kept distinct per purpose.
_BLOB_STREAM = 1
_AUGMENT_STREAM = 2


class CsvFormatError(ValueError):
    """Malformed dataset CSV; carries the 1-based offending line number."""

    def __init__(self, path, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"{path}: line {line_number}: {message}")


@dataclass
class Dataset:
    features: np.ndarray        # (N, dim)
    labels: np.ndarray | None   # (N,) ints, or None when ground truth is absent
    seed: int | None = None

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None


def gen_blobs(seed: int, n_samples: int, classes: int, dim: int,
              centroid_scale: float, sigma: float) -> Dataset:
    """Balanced Gaussian blobs around uniformly drawn centroids.

    Class sizes differ by at most one, with the remainder going to the lowest
    class indices. Samples are grouped by class in index order.
    """
    if classes < 2 or n_samples < classes or dim < 1:
        raise ValueError(
            f"need n_samples >= classes >= 2 and dim >= 1, got "
            f"n_samples={n_samples}, classes={classes}, dim={dim}")
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _BLOB_STREAM]))
    centroids = rng.uniform(-centroid_scale, centroid_scale, size=(classes, dim))
    base, extra = divmod(n_samples, classes)
    counts = [base + (1 if c < extra else 0) for c in range(classes)]
    labels = np.repeat(np.arange(classes), counts)
    noise = rng.standard_normal((n_samples, dim))
    features = centroids[labels] + sigma * noise
    return Dataset(features, labels, int(seed))


def augment(features: np.ndarray, noise_sigma: float, seed: int) -> np.ndarray:
    """A second view of the features: additive Gaussian noise, pinned by seed."""
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _AUGMENT_STREAM]))
    return features + noise_sigma * rng.standard_normal(features.shape)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_dataset_csv(path, dataset: Dataset) -> None:
    """Feature columns f0..f{dim-1}, plus a final 'label' column when present."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"f{i}" for i in range(dataset.dim)]
        if dataset.has_labels:
            header.append("label")
        writer.writerow(header)
        for i in range(dataset.n_samples):
            row = [_fmt(v) for v in dataset.features[i]]
            if dataset.has_labels:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(path, 1, "empty file")
    header = rows[0]
    has_labels = bool(header) and header[-1] == "label"
    dim = len(header) - (1 if has_labels else 0)
    expected = [f"f{i}" for i in range(dim)] + (["label"] if has_labels else [])
    if header != expected:
        raise CsvFormatError(path, 1, f"unexpected header {header!r}")
    features, labels = [], []
    for line_number, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvFormatError(path, line_number,
                                 f"expected {len(header)} cells, found {len(row)}")
        try:
            features.append([float(v) for v in row[:dim]])
        except ValueError:
            raise CsvFormatError(path, line_number, "non-numeric feature cell") from None
        if has_labels:
            try:
                labels.append(int(row[dim]))
            except ValueError:
                raise CsvFormatError(path, line_number, "non-integer label cell") from None
    if not features:
        raise CsvFormatError(path, 2, "no data rows")
    return Dataset(np.array(features, dtype=np.float64),
                   np.array(labels, dtype=np.int64) if has_labels else None)


def save_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "label"])
        for i, label in enumerate(np.asarray(labels)):
            writer.writerow([i, int(label)])


def load_labels_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["sample_index", "label"]:
        raise CsvFormatError(path, 1, "expected header sample_index,label")
    out = []
    for line_number, row in enumerate(rows[1:], start=2):
        try:
            out.append(int(row[1]))
        except (IndexError, ValueError):
            raise CsvFormatError(path, line_number, "malformed label row") from None
    return np.array(out, dtype=np.int64)


def save_matrix_csv(path, matrix) -> None:
    """Headerless numeric matrix, one CSV row per matrix row, 17 sig digits."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([_fmt(v) for v in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except ValueError:
        raise CsvFormatError(path, 0, "non-numeric matrix cell") from None
