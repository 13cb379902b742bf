"""Boundary-map statistics over interface voxels."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

STAT_FIELDS = ("mean", "median", "var", "skew", "kurt", "q1", "q3", "count", "min", "max")
SENTINEL_VALUE = 1.0  # "certain boundary"
_DEGENERATE_VAR = 1e-12


def summary_stats(values) -> np.ndarray:
    """The ten interface statistics in ``STAT_FIELDS`` order.

    Moments are population moments; kurtosis is excess kurtosis.  Skewness
    and kurtosis are 0 for (near-)constant samples.  An empty sample gives
    the sentinel ``count = 0`` with every other field at 1.0.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        out = np.full(len(STAT_FIELDS), SENTINEL_VALUE)
        out[STAT_FIELDS.index("count")] = 0.0
        return out
    mean = v.mean()
    dev = v - mean
    var = np.mean(dev**2)
    if var < _DEGENERATE_VAR:
        skew = kurt = 0.0
    else:
        skew = np.mean(dev**3) / var**1.5
        kurt = np.mean(dev**4) / var**2 - 3.0
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return np.array([mean, med, var, skew, kurt, q1, q3, float(v.size), v.min(), v.max()])


def gather(vol: np.ndarray, voxels: np.ndarray) -> np.ndarray:
    voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    return vol[voxels[:, 0], voxels[:, 1], voxels[:, 2]]


def gradient_magnitude(vol: np.ndarray) -> np.ndarray:
    """|grad| by central differences (one-sided on the array border)."""
    v = np.asarray(vol, dtype=np.float64)
    g = np.gradient(v) if min(v.shape) > 1 else [np.zeros_like(v)] * 3
    return np.sqrt(sum(c**2 for c in g))


def laplacian(vol: np.ndarray) -> np.ndarray:
    """Six-point Laplacian with edge replication on the border."""
    v = np.asarray(vol, dtype=np.float64)
    return ndimage.laplace(v, mode="nearest")


def boundary_stats(bm: np.ndarray, interface) -> np.ndarray:
    return summary_stats(gather(bm, interface))


def derivative_stats(bm: np.ndarray, interface) -> np.ndarray:
    """Statistics of |grad bm| then of lap(bm) over the interface (20 values)."""
    interface = np.asarray(interface).reshape(-1, 3)
    if interface.shape[0] == 0:
        return np.concatenate([summary_stats([]), summary_stats([])])
    return np.concatenate([
        summary_stats(gather(gradient_magnitude(bm), interface)),
        summary_stats(gather(laplacian(bm), interface)),
    ])
