"""Synthetic datasets, CSV interchange, and train/validation splitting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    clean_labels: np.ndarray
    n_classes: int
    noisy_labels: np.ndarray | None = None
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an n x d matrix")
        n = self.features.shape[0]
        if self.clean_labels.shape != (n,):
            raise ValueError("clean_labels must have one entry per sample")
        if self.noisy_labels is not None:
            self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
            if self.noisy_labels.shape != (n,):
                raise ValueError("noisy_labels must have one entry per sample")
        for lab in (self.clean_labels, self.noisy_labels):
            if lab is not None and lab.size and (lab.min() < 0 or lab.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def train_labels(self) -> np.ndarray:
        """Labels visible to training: the noisy ones when present."""
        return self.clean_labels if self.noisy_labels is None else self.noisy_labels

    def subset(self, idx: np.ndarray, split: str | None = None) -> "Dataset":
        return replace(
            self,
            features=self.features[idx],
            clean_labels=self.clean_labels[idx],
            noisy_labels=None if self.noisy_labels is None else self.noisy_labels[idx],
            split=split or self.split,
        )


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def class_means(c: int, d: int, separation: float = 1.0) -> np.ndarray:
    """Class centres with pairwise distance ``separation`` where possible.

    For c <= d + 1 the centres are the vertices of a regular simplex. With
    fewer dimensions they sit on a circle (or a line for d = 1) with
    adjacent centres ``separation`` apart.
    """
    if c <= d + 1:
        # regular simplex: centred basis vectors, rotated into the first c-1 dims
        e = np.eye(c) - 1.0 / c
        q, _ = np.linalg.qr(e.T)
        pts = e @ q[:, : c - 1] / np.sqrt(2.0)
        out = np.zeros((c, d))
        out[:, : c - 1] = pts
        return out * separation
    out = np.zeros((c, d))
    if d == 1:
        out[:, 0] = np.arange(c) * separation
        return out
    radius = separation / (2 * np.sin(np.pi / c))
    ang = 2 * np.pi * np.arange(c) / c
    out[:, 0] = radius * np.cos(ang)
    out[:, 1] = radius * np.sin(ang)
    return out


def make_blobs(n: int, c: int, d: int, spread: float = 0.25, seed=0,
               separation: float = 1.0) -> Dataset:
    """Balanced Gaussian clusters around unit-spaced class centres."""
    if c < 2:
        raise ValueError(f"c must be >= 2, got {c}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if n < c:
        raise ValueError(f"n must be >= c, got n={n}, c={c}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    rng = _rng(seed)
    counts = np.full(c, n // c)
    counts[: n % c] += 1
    labels = np.repeat(np.arange(c), counts)
    x = class_means(c, d, separation)[labels] + spread * rng.standard_normal((n, d))
    perm = rng.permutation(n)
    return Dataset(x[perm], labels[perm], c)


def make_rings(n: int, c: int = 2, seed=0, width: float = 0.15) -> Dataset:
    """Concentric annuli in 2-D; class j has mean radius j + 1."""
    if c not in (2, 3):
        raise ValueError(f"make_rings supports c in {{2, 3}}, got {c}")
    if n < c:
        raise ValueError(f"n must be >= c, got n={n}, c={c}")
    rng = _rng(seed)
    counts = np.full(c, n // c)
    counts[: n % c] += 1
    labels = np.repeat(np.arange(c), counts)
    radius = labels + 1.0 + width * rng.standard_normal(n)
    theta = rng.uniform(0, 2 * np.pi, n)
    x = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    perm = rng.permutation(n)
    return Dataset(x[perm], labels[perm], c)


def split(dataset: Dataset, val_fraction: float = 0.1, seed=0) -> tuple[Dataset, Dataset]:
    """Uniform random (unstratified) train/validation split."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n_val > n - 1:
        raise ValueError(f"split of {n} samples at {val_fraction} leaves an empty side")
    perm = _rng(seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return dataset.subset(train_idx, "train"), dataset.subset(val_idx, "val")


# ---------------------------------------------------------------------------
# CSV: x0..x{d-1}, clean_label, noisy_label (noisy may be empty)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(dataset.dim)] + ["clean_label", "noisy_label"])
        noisy = dataset.noisy_labels
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.clean_labels[i])))
            row.append("" if noisy is None else str(int(noisy[i])))
            w.writerow(row)


def load_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    """Read the CSV schema written by :func:`save_csv`.

    ``n_classes`` defaults to one more than the largest label seen.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: missing header")
    header = rows[0]
    if len(header) < 3 or header[-2:] != ["clean_label", "noisy_label"]:
        raise DatasetFormatError(f"{path}: header must end with clean_label,noisy_label")
    body = rows[1:]
    if not body:
        raise DatasetFormatError(f"{path}: no samples")
    d = len(header) - 2
    feats = np.empty((len(body), d))
    clean = np.empty(len(body), dtype=np.int64)
    noisy = np.empty(len(body), dtype=np.int64)
    noisy_present = []
    for i, row in enumerate(body):
        if len(row) != d + 2:
            raise DatasetFormatError(f"{path}: row {i} has {len(row)} columns, expected {d + 2}")
        try:
            feats[i] = [float(v) for v in row[:d]]
            clean[i] = int(row[d])
            if row[d + 1].strip():
                noisy[i] = int(row[d + 1])
                noisy_present.append(True)
            else:
                noisy_present.append(False)
        except ValueError:
            raise DatasetFormatError(f"{path}: row {i} has a non-numeric cell") from None
    if any(noisy_present) and not all(noisy_present):
        raise DatasetFormatError(f"{path}: noisy_label must be filled for all rows or none")
    has_noisy = all(noisy_present)
    top = int(max(clean.max(), noisy.max() if has_noisy else 0))
    c = n_classes if n_classes is not None else top + 1
    try:
        return Dataset(feats, clean, max(c, 2), noisy if has_noisy else None)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
