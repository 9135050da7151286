"""Sparse ``label index:value ...`` text datasets (1-based feature indices)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetParseError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be 2-d with one row per label")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.name)


_LABELS = {-1.0: -1.0, 1.0: 1.0, 0.0: -1.0}


def _parse_label(tok: str, lineno: int, classes: Optional[tuple]) -> Optional[float]:
    try:
        raw = float(tok)
    except ValueError:
        raise DatasetParseError(f"line {lineno}: bad label {tok!r}") from None
    if classes is not None:
        if raw == classes[0]:
            return 1.0
        if raw == classes[1]:
            return -1.0
        return None
    if raw not in _LABELS:
        raise DatasetParseError(f"line {lineno}: label {tok!r} is not one of -1, +1, 0, 1")
    return _LABELS[raw]


def parse_dataset(
    path,
    expected_dimension: Optional[int] = None,
    classes: Optional[Sequence[float]] = None,
    name: Optional[str] = None,
) -> Dataset:
    """Read a sparse-format file; absent features are 0.

    ``classes=(a, b)`` keeps only rows labelled ``a`` (mapped to +1) or ``b``
    (mapped to -1) and accepts any numeric labels.
    """
    cls = tuple(float(c) for c in classes) if classes is not None else None
    if cls is not None and len(cls) != 2:
        raise ValueError("classes must name exactly two labels")
    labels, rows = [], []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            label = _parse_label(tokens[0], lineno, cls)
            feats = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise DatasetParseError(f"line {lineno}: bad feature token {tok!r}") from None
                if j < 1:
                    raise DatasetParseError(f"line {lineno}: feature index must be >= 1, got {j}")
                if not math.isfinite(v):
                    raise DatasetParseError(f"line {lineno}: non-finite value {val!r}")
                if expected_dimension is not None and j > expected_dimension:
                    raise DatasetParseError(f"line {lineno}: feature {j} exceeds dimension {expected_dimension}")
                feats[j - 1] = v
                max_index = max(max_index, j)
            if label is None:
                continue
            labels.append(label)
            rows.append(feats)
    d = expected_dimension if expected_dimension is not None else max_index
    X = np.zeros((len(rows), d))
    for i, feats in enumerate(rows):
        for j, v in feats.items():
            X[i, j] = v
    return Dataset(X, np.array(labels), name or Path(path).name)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for x, y in zip(dataset.X, dataset.y):
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(x.tolist()) if v != 0)
            fh.write(f"{int(y):+d} {feats}".rstrip() + "\n")


def minmax_bounds(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = X.min(axis=0) if len(X) else np.zeros(X.shape[1])
    hi = X.max(axis=0) if len(X) else np.ones(X.shape[1])
    return lo, hi


def minmax_scale(dataset: Dataset, bounds=None) -> Dataset:
    """Map each feature to [0, 1]; constant features become 0."""
    lo, hi = minmax_bounds(dataset.X) if bounds is None else bounds
    span = np.where(hi > lo, hi - lo, 1.0)
    return Dataset((dataset.X - lo) / span, dataset.y, dataset.name)


def train_test_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0, stratify: bool = False) -> tuple[Dataset, Dataset]:
    """Shuffled split; the test part has ``ceil(test_fraction * n)`` rows.

    With ``stratify`` the test rows are drawn per class in proportion (largest
    remainder), so both parts keep the class balance.
    """
    n = len(dataset)
    n_test = int(math.ceil(test_fraction * n))
    rng = np.random.default_rng(seed)
    if not stratify:
        perm = rng.permutation(n)
        return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))
    classes = (1.0, -1.0)
    members = [np.flatnonzero(dataset.y == c) for c in classes]
    quota = [n_test * len(m) / n if n else 0.0 for m in members]
    take = [int(math.floor(q)) for q in quota]
    if sum(take) < n_test:
        take[int(np.argmax([q - t for q, t in zip(quota, take)]))] += n_test - sum(take)
    test_idx = np.concatenate([rng.permutation(m)[:k] for m, k in zip(members, take)])
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


def subsample(dataset: Dataset, n: int, seed: int = 0) -> Dataset:
    if n >= len(dataset):
        return dataset
    idx = np.sort(np.random.default_rng(seed).choice(len(dataset), size=n, replace=False))
    return dataset.subset(idx)
