"""Dense 3D SIFT-style descriptors with soft VQ, and raw-image statistics."""
from __future__ import annotations

import itertools

import numpy as np

from ..learn.kmeans import Codebook, triangle_encode
from ..volume import SubvolumeSpec, crop_padded, window_origin
from ..errors import StateError
from .boundary import boundary_stats, derivative_stats, summary_stats

SIFT_STRIDE = 4
SIFT_PATCH = 16
SIFT_SIGMA = 8.0
SIFT_CLAMP = 0.2
SIFT_CELLS = 2
_TIE_TOL = 1e-9


def icosahedron_vertices() -> np.ndarray:
    """The 12 unit vertices of a regular icosahedron (6 axes, both signs)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = []
    for a, b in itertools.product((-1.0, 1.0), repeat=2):
        v += [(0.0, a, b * phi), (a, b * phi, 0.0), (b * phi, 0.0, a)]
    v = np.array(v)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


ICOSA = icosahedron_vertices()


def default_offsets(stride: int = SIFT_STRIDE) -> np.ndarray:
    """The 27 lattice offsets ``{-stride, 0, stride}^3`` in lexicographic order."""
    r = (-stride, 0, stride)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


def orientation_bins(grad: np.ndarray) -> np.ndarray:
    """Split each gradient (rows) over its nearest icosahedral directions.

    Returns ``(n, 12)`` weights summing to the gradient magnitude; ties are
    shared equally.
    """
    grad = np.asarray(grad, dtype=np.float64).reshape(-1, 3)
    mag = np.linalg.norm(grad, axis=1)
    dots = grad @ ICOSA.T
    best = dots.max(axis=1, keepdims=True)
    hit = dots >= best - _TIE_TOL * np.maximum(mag[:, None], 1.0)
    out = np.zeros_like(dots)
    single = hit.sum(axis=1) == 1
    rows = np.flatnonzero(single)
    out[rows, dots[rows].argmax(axis=1)] = mag[rows]
    tied = np.flatnonzero(~single & (mag > 0))
    if tied.size:
        h = hit[tied]
        out[tied] = h / h.sum(axis=1, keepdims=True) * mag[tied, None]
    return out


def _gaussian_weights(patch: int, sigma: float) -> np.ndarray:
    c = np.arange(patch) - (patch - 1) / 2.0
    g = np.exp(-(c**2) / (2.0 * sigma**2))
    return g[:, None, None] * g[None, :, None] * g[None, None, :]


def _descriptors(bins: np.ndarray, starts, patch: int, weight: np.ndarray, cells: int, clamp: float) -> np.ndarray:
    """bins: (nx, ny, nz, 12) per-voxel orientation weights; one descriptor per patch start."""
    c = patch // cells
    hist = []
    for a in starts:
        sl = tuple(slice(int(x), int(x) + patch) for x in a)
        w = bins[sl] * weight[..., None]
        hist.append(w.reshape(cells, c, cells, c, cells, c, -1).sum(axis=(1, 3, 5)).ravel())
    hist = np.array(hist)
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    flat = norm[:, 0] <= 1e-12
    hist = np.minimum(hist / np.where(flat[:, None], 1.0, norm), clamp)
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    hist = hist / np.where(flat[:, None], 1.0, norm)
    hist[flat] = 0.0
    return hist


def sift3d_descriptors(
    vol: np.ndarray,
    point,
    offsets=None,
    patch: int = SIFT_PATCH,
    sigma: float = SIFT_SIGMA,
    clamp: float = SIFT_CLAMP,
    cells: int = SIFT_CELLS,
) -> np.ndarray:
    """One ``cells^3 * 12`` descriptor per sample ``point + offset`` (rows).

    The patch around a sample covers ``sample - patch//2 .. sample + patch//2 - 1``.
    Gradients are central differences; voxels outside the volume take the
    volume mean.
    """
    if patch % cells:
        raise ValueError(f"patch side {patch} not divisible into {cells} cells")
    offs = default_offsets() if offsets is None else np.asarray(offsets, dtype=np.int64).reshape(-1, 3)
    samples = np.asarray(point, dtype=np.int64) + offs
    if samples.shape[0] == 0:
        return np.zeros((0, cells**3 * 12))
    v = np.asarray(vol, dtype=np.float64)
    half = patch // 2
    lo = samples.min(axis=0) - half - 1
    hi = samples.max(axis=0) + half + 1
    region = crop_padded(v, lo, hi - lo, float(v.mean()))
    grad = np.zeros((3,) + region.shape)
    for ax in range(3):
        fwd = [slice(None)] * 3
        bwd = [slice(None)] * 3
        mid = [slice(None)] * 3
        fwd[ax], bwd[ax], mid[ax] = slice(2, None), slice(None, -2), slice(1, -1)
        grad[(ax,) + tuple(mid)] = 0.5 * (region[tuple(fwd)] - region[tuple(bwd)])
    weight = _gaussian_weights(patch, sigma)
    bins = orientation_bins(grad.reshape(3, -1).T).reshape(region.shape + (-1,))
    return _descriptors(bins, samples - half - lo, patch, weight, cells, clamp)


def _mean_encoding(descs, codebook: Codebook) -> np.ndarray:
    descs = np.asarray(descs, dtype=np.float64)
    if descs.size == 0:
        return np.zeros(codebook.k)
    return triangle_encode(descs.reshape(-1, codebook.centroids.shape[1]), codebook).mean(axis=0)


def sift_vq_features(descs_image, descs_affinity, codebook_img: Codebook, codebook_aff: Codebook) -> np.ndarray:
    """Mean triangle encodings, image codebook half first (2 x k values)."""
    for cb in (codebook_img, codebook_aff):
        if not cb.trained:
            raise StateError("codebook has not been trained")
    return np.concatenate([_mean_encoding(descs_image, codebook_img), _mean_encoding(descs_affinity, codebook_aff)])


def window_values(vol: np.ndarray, window: SubvolumeSpec) -> np.ndarray:
    """Original-resolution voxel values of the window that lie inside the volume."""
    lo = np.maximum(window_origin(window), 0)
    hi = np.minimum(window_origin(window) + window.side * window.downsample, vol.shape)
    return vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]


def image_stats_features(vol: np.ndarray, interface, window: SubvolumeSpec) -> np.ndarray:
    """Interface moments (10), interface derivative stats (20), window moments (10)."""
    vol = np.asarray(vol, dtype=np.float64)
    return np.concatenate([
        boundary_stats(vol, interface),
        derivative_stats(vol, interface),
        summary_stats(window_values(vol, window)),
    ])
