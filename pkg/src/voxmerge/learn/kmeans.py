"""Seeded k-means with k-means++ initialisation and triangle soft assignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import StateError
from ._io import expect_size, read_blob, write_blob

MAGIC = "CODEBOOK1"


@dataclass
class Codebook:
    centroids: np.ndarray | None = None
    seed: int = 0
    inertia: list = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.centroids is not None

    @property
    def k(self) -> int:
        return 0 if self.centroids is None else self.centroids.shape[0]

    def save(self, path) -> None:
        if not self.trained:
            raise StateError("cannot save an untrained codebook")
        k, d = self.centroids.shape
        write_blob(path, {"magic": MAGIC, "k": k, "dims": d, "seed": self.seed}, [self.centroids])

    @classmethod
    def load(cls, path) -> "Codebook":
        header, values = read_blob(path, MAGIC)
        k, d = int(header["k"]), int(header["dims"])
        expect_size(values, k * d, "codebook payload")
        return cls(values.reshape(k, d).astype(np.float64), int(header.get("seed", 0)))


def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point coincides with a centre already; take the first unused one
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[0])
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, sq_distances(x, x[idx:idx + 1]).ravel())
    return x[chosen].copy()


def kmeans_train(samples, k: int, seed: int = 0, iters: int = 100) -> Codebook:
    """Lloyd iterations from a k-means++ start until assignments stop changing."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be 2D, got shape {x.shape}")
    if k < 1 or x.shape[0] < k:
        raise ValueError(f"need at least k={k} samples, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    c = _kmeanspp(x, k, rng)
    assign = None
    trace = []
    for _ in range(max(iters, 1)):
        d = sq_distances(x, c)
        new = d.argmin(axis=1)
        trace.append(float(d[np.arange(x.shape[0]), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, assign, x)
        live = counts > 0
        c[live] = sums[live] / counts[live, None]
    return Codebook(c, seed, trace)


def triangle_encode(x, codebook: Codebook) -> np.ndarray:
    """``max(0, mean_j d_j - d_j)`` with ``d_j`` the distance to centroid j."""
    if not codebook.trained:
        raise StateError("codebook has not been trained")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = np.sqrt(sq_distances(x, codebook.centroids))
    return np.maximum(0.0, d.mean(axis=1, keepdims=True) - d)
