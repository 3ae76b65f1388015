"""
Encoding Module

k-means codebook training and VLAD aggregation of local descriptors.
"""

import json
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from src.core.errors import TooFewDescriptors, DimensionMismatch, InvalidParameter
from src.core.logger import PlaceLogger

DEFAULT_CODEBOOK_K = 16
MAX_LLOYD_ITERATIONS = 100

logger = PlaceLogger('encoding')


@dataclass(frozen=True, eq=False)
class Codebook:
    """k x dim centroid matrix and the seed it was trained with."""
    k: int
    dim: int
    centroids: np.ndarray
    train_seed: int
    objective_history: Tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            'k': self.k,
            'dim': self.dim,
            'seed': self.train_seed,
            'centroids': self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Codebook':
        centroids = np.asarray(data['centroids'], dtype=np.float64)
        if centroids.shape != (data['k'], data['dim']):
            raise DimensionMismatch(
                f"codebook declares {data['k']}x{data['dim']} but holds {centroids.shape}")
        return cls(k=int(data['k']), dim=int(data['dim']), centroids=centroids,
                   train_seed=int(data['seed']))

    def save(self, path: str):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_dict(), file)
            file.write('\n')

    @classmethod
    def load(cls, path: str) -> 'Codebook':
        with open(path, 'r', encoding='utf-8') as file:
            return cls.from_dict(json.load(file))


@dataclass(frozen=True, eq=False)
class VladCode:
    """Flattened cluster-major VLAD vector of length k * dim."""
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


def _as_matrix(descriptors) -> np.ndarray:
    data = np.asarray(descriptors, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1) if data.size else data.reshape(0, 0)
    return data


def _assign(data: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    distances = cdist(data, centroids, 'sqeuclidean')
    labels = np.argmin(distances, axis=1)
    return labels, distances[np.arange(len(data)), labels]


def train_codebook(descriptors, k: int = DEFAULT_CODEBOOK_K, seed: int = 0,
                   max_iterations: int = MAX_LLOYD_ITERATIONS) -> Codebook:
    """
    Train a k-means codebook.

    Args:
        descriptors: (n, dim) array-like, n >= k
        k: Number of centroids
        seed: Seed for the k-means++ initialization

    Returns:
        Codebook: with the per-iteration objective recorded in objective_history
    """
    data = _as_matrix(descriptors)
    if k < 2:
        raise InvalidParameter(f"k must be at least 2, got {k}")
    if seed < 0:
        raise InvalidParameter(f"seed must be non-negative, got {seed}")
    if len(data) < k:
        raise TooFewDescriptors(f"{len(data)} descriptors cannot train {k} centroids")
    if len(np.unique(data, axis=0)) < k:
        raise TooFewDescriptors(f"fewer than {k} distinct descriptors")

    centroids, _ = kmeans_plusplus(data, k, random_state=seed)
    centroids = centroids.astype(np.float64)
    labels, cost = _assign(data, centroids)
    history = [float(cost.sum())]

    for iteration in range(max_iterations):
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                centroids[c] = data[labels == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            # re-seed from the point farthest from its centroid
            _, cost = _assign(data, centroids)
            taken = {tuple(row) for row in centroids}
            for index in np.argsort(-cost, kind='stable'):
                if tuple(data[index]) not in taken:
                    centroids[c] = data[index]
                    break

        new_labels, cost = _assign(data, centroids)
        history.append(float(cost.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    logger.info(f"Codebook trained: k={k}, {len(data)} descriptors, "
                f"{len(history) - 1} Lloyd iterations, objective {history[-1]:.4f}")
    return Codebook(k=k, dim=data.shape[1], centroids=centroids, train_seed=seed,
                    objective_history=tuple(history))


def vlad_encode(descriptors, cb: Codebook) -> VladCode:
    """
    Aggregate residuals to the nearest centroid, then signed square root and L2.

    An empty descriptor set yields the all-zero code.
    """
    data = _as_matrix(descriptors)
    if data.size == 0:
        return VladCode(np.zeros(cb.k * cb.dim))
    if data.shape[1] != cb.dim:
        raise DimensionMismatch(f"descriptors have dim {data.shape[1]}, codebook has {cb.dim}")

    labels, _ = _assign(data, cb.centroids)
    residuals = np.zeros((cb.k, cb.dim))
    np.add.at(residuals, labels, data - cb.centroids[labels])
    vector = residuals.ravel()
    vector = np.sign(vector) * np.sqrt(np.abs(vector))
    norm = np.linalg.norm(vector)
    return VladCode(vector / norm if norm > 0 else vector)


def vlad_distance(a: VladCode, b: VladCode) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"VLAD codes of length {len(a)} and {len(b)}")
    return float(np.linalg.norm(a.values - b.values))


def stack_codes(codes: Sequence[VladCode]) -> np.ndarray:
    """(n, k*dim) matrix of codes."""
    if not codes:
        return np.zeros((0, 0))
    return np.stack([code.values for code in codes])
