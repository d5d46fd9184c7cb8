"""Neighbour-swap pseudo labels for the synthetic meta batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

K_NN = 8


@dataclass
class NeighborIndex:
    indices: np.ndarray    # k x n_nb, ascending distance, ties by lower index
    distances: np.ndarray  # squared Euclidean, same shape

    @property
    def n_neighbors(self) -> int:
        return self.indices.shape[1]


@dataclass
class PseudoLabelSet:
    labels: list[np.ndarray]     # Q one-hot k x c matrices
    positions: list[np.ndarray]  # reassigned rows of each set
    sources: list[np.ndarray]    # neighbour whose label each position received

    def __len__(self):
        return len(self.labels)


def build_neighbor_index(features: np.ndarray, k_nn: int = K_NN) -> NeighborIndex:
    """Exact in-batch k-NN, self excluded."""
    x = np.asarray(features, dtype=np.float64)
    k = x.shape[0]
    if k < 2:
        raise ValueError(f"neighbour search needs at least 2 samples, got {k}")
    if k_nn < 1:
        raise ValueError(f"k_nn must be >= 1, got {k_nn}")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(dist, np.inf)
    n_nb = min(k_nn, k - 1)
    order = np.argsort(dist, axis=1, kind="stable")[:, :n_nb]
    return NeighborIndex(order, np.take_along_axis(dist, order, axis=1))


def generate_pseudo_set(labels: np.ndarray, index: NeighborIndex, m: int, rng: np.random.Generator):
    """Give m distinct random rows the label of a random top-k neighbour.

    Returns ``(pseudo, positions, sources)``. Sources read the original
    batch labels, not labels already swapped in this set.
    """
    labels = np.asarray(labels)
    k = labels.shape[0]
    if index.indices.shape[0] != k:
        raise ValueError(f"index covers {index.indices.shape[0]} samples, batch has {k}")
    if not 0 <= m <= k:
        raise ValueError(f"m must be in [0, {k}], got {m}")
    pseudo = labels.copy()
    positions = rng.choice(k, size=m, replace=False) if m else np.zeros(0, dtype=np.int64)
    slots = rng.integers(0, index.n_neighbors, size=m)
    sources = index.indices[positions, slots]
    pseudo[positions] = labels[sources]
    return pseudo, positions, sources


def generate_q_sets(labels: np.ndarray, index: NeighborIndex, m: int, q: int,
                    rng: np.random.Generator) -> PseudoLabelSet:
    if q < 1:
        raise ValueError(f"Q must be >= 1, got {q}")
    out = PseudoLabelSet([], [], [])
    for _ in range(q):
        y, pos, src = generate_pseudo_set(labels, index, m, rng)
        out.labels.append(y)
        out.positions.append(pos)
        out.sources.append(src)
    return out
