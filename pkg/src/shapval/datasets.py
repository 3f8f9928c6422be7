"""Flat-file dataset loading.

Datasets are CSV files with one row per point: feature columns followed
by a final label column (`f1,...,fd,label`).  A header row is detected
and skipped when the feature cells do not parse as numbers.  Labels are
opaque strings compared for equality only.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = ["load_labeled_csv", "signed_labels"]


def load_labeled_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read (features, labels) from a CSV file; may raise OSError."""
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and any(cell.strip() for cell in row):
                rows.append([cell.strip() for cell in row])
    if not rows:
        raise ConfigError(f"dataset {path} is empty")
    start = 0
    try:
        [float(cell) for cell in rows[0][:-1]]
    except ValueError:
        start = 1  # header row
    data = rows[start:]
    if not data:
        raise ConfigError(f"dataset {path} has no data rows")
    width = len(data[0])
    if width < 2:
        raise ConfigError(f"dataset {path} needs at least one feature and a label")
    features = np.empty((len(data), width - 1), dtype=np.float64)
    labels = np.empty(len(data), dtype=object)
    for i, row in enumerate(data):
        if len(row) != width:
            raise ConfigError(f"dataset {path}: row {i + start + 1} has {len(row)} cells, expected {width}")
        try:
            features[i] = [float(cell) for cell in row[:-1]]
        except ValueError as exc:
            raise ConfigError(f"dataset {path}: non-numeric feature in row {i + start + 1}") from exc
        labels[i] = row[-1]
    return features, labels


def signed_labels(labels: np.ndarray) -> np.ndarray:
    """Map labels written as -1/+1 (or -1.0/1.0) to floats, rejecting others."""
    out = np.empty(labels.shape[0], dtype=np.float64)
    for i, lab in enumerate(labels):
        try:
            val = float(lab)
        except (TypeError, ValueError):
            raise ConfigError(f"label {lab!r} is not a signed binary label")
        if val not in (-1.0, 1.0):
            raise ConfigError(f"label {lab!r} must be -1 or +1")
        out[i] = val
    return out
