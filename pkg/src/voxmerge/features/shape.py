"""Shape diameter function and 3D shape context descriptors."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

from .. import _kernels
from ..errors import DomainError
from ..learn.kmeans import Codebook, triangle_encode
from ..augment import isometry_group
from .boundary import _DEGENERATE_VAR

SDF_HALF_ANGLE = np.deg2rad(60.0)
SDF_STEP = 0.5
SC_RADIAL, SC_POLAR, SC_AZIMUTH = 5, 12, 12
SC_BINS = SC_RADIAL * SC_POLAR * SC_AZIMUTH


@lru_cache(maxsize=2)
def ray_pool(per_cell: int = 8) -> np.ndarray:
    """Unit directions closed under the 16 square-prism isometries.

    ``per_cell`` generic directions are spread over one sixteenth of the
    sphere (azimuth 0..45 degrees, upper half) and mapped by every group
    element, so no direction lies on a symmetry plane and the set maps to
    itself under any isometry.
    """
    i = np.arange(per_cell) + 0.5
    cos_t = 1.0 - i / per_cell * 0.98 - 0.01
    phi = np.mod(i * np.pi * (3.0 - np.sqrt(5.0)), 1.0) * 0.9 * (np.pi / 4) + 0.05 * (np.pi / 4)
    s = np.sqrt(1.0 - cos_t**2)
    base = np.stack([s * np.cos(phi), s * np.sin(phi), cos_t], axis=1)
    mats = [g.matrix for g in isometry_group()]
    return np.concatenate([base @ m.T for m in mats])


def cone_selection(axes: np.ndarray, half_angle: float = SDF_HALF_ANGLE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(point index, pool index, angle from axis) of every pool ray inside each axis's cone."""
    pool = ray_pool()
    cosines = np.clip(np.asarray(axes) @ pool.T, -1.0, 1.0)
    pi, di = np.nonzero(cosines >= np.cos(half_angle))
    return pi, di, np.arccos(cosines[pi, di])


def grouped_weighted_median(groups: np.ndarray, values: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    """Lower weighted median of ``values`` within each group id ``0..n-1``."""
    order = np.lexsort((values, groups))
    g, v, w = groups[order], values[order], weights[order]
    cw = np.cumsum(w)
    start = np.searchsorted(g, np.arange(n), side="left")
    stop = np.searchsorted(g, np.arange(n), side="right")
    before = np.where(start > 0, cw[np.maximum(start - 1, 0)], 0.0)
    total = cw[stop - 1] - before
    target = before + 0.5 * total
    # first index in each group whose cumulative weight reaches half the group's weight
    idx = np.searchsorted(cw, target - 1e-12 * np.maximum(total, 1.0), side="left")
    return v[np.clip(idx, start, stop - 1)]


def weighted_median(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted median (lower median on exact half splits)."""
    order = np.argsort(values, axis=-1, kind="stable")
    v = np.take_along_axis(values, order, axis=-1)
    w = np.broadcast_to(weights, values.shape)
    w = np.take_along_axis(w, order, axis=-1)
    cw = np.cumsum(w, axis=-1)
    idx = np.argmax(cw >= 0.5 * cw[..., -1:], axis=-1)
    return np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]


def _inward_directions(mask: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit inward normals, plus a flag for points whose normal came from a sign-free fallback."""
    sd = ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(~mask)
    grads = np.stack(np.gradient(sd), axis=-1)
    g = grads[pts[:, 0], pts[:, 1], pts[:, 2]]
    norm = np.linalg.norm(g, axis=1)
    out = np.zeros_like(g)
    ok = norm > 1e-6
    out[ok] = g[ok] / norm[ok, None]
    # thin structures: fall back to the locally thinnest direction
    for i in np.flatnonzero(~ok):
        p = pts[i]
        lo = np.maximum(p - 2, 0)
        hi = np.minimum(p + 3, mask.shape)
        local = np.argwhere(mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]).astype(float)
        if local.shape[0] < 3:
            out[i] = (0.0, 0.0, 1.0)
            continue
        c = local - local.mean(axis=0)
        _, v = np.linalg.eigh(c.T @ c)
        out[i] = v[:, 0]
    return out, ~ok


def shape_diameter_values(mask: np.ndarray, step: float = SDF_STEP) -> np.ndarray:
    """One shape-diameter value per surface voxel of ``mask``.

    Rays from a fixed isometry-closed pool that fall inside the cone
    around the inward direction are cast until they leave the mask (or
    the window); the value is the ``1/angle``-weighted median of the ray
    lengths, measured from the voxel's outer face.  Where the normal has no
    sign (thin sheets) both cones are used and the two medians averaged.
    """
    mask = np.ascontiguousarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1), border_value=1)
    pts = np.argwhere(mask & ~inner)
    if pts.shape[0] == 0:
        raise DomainError("mask has no surface voxels")
    axes, signless = _inward_directions(mask, pts)
    both = np.flatnonzero(signless)
    axes = np.concatenate([axes, -axes[both]])
    owner = np.concatenate([np.arange(pts.shape[0]), both])
    pi, di, theta = cone_selection(axes)
    lengths = _kernels.march_chords(mask, pts.astype(np.float64), ray_pool(), owner[pi], di, step) + 0.5
    med = grouped_weighted_median(pi, lengths, 1.0 / np.maximum(theta, 1e-3), axes.shape[0])
    out = med[:pts.shape[0]].copy()
    out[both] = 0.5 * (out[both] + med[pts.shape[0]:])
    return out


def _moments(v: np.ndarray) -> list[float]:
    mean = v.mean()
    dev = v - mean
    var = np.mean(dev**2)
    if var < _DEGENERATE_VAR:
        return [mean, var, 0.0, 0.0]
    return [mean, var, np.mean(dev**3) / var**1.5, np.mean(dev**4) / var**2 - 3.0]


def shape_diameter_features(mask_a: np.ndarray, mask_b: np.ndarray) -> np.ndarray:
    """18 values: moments (mean, var, skew, kurt) for a then b, then
    quantiles (min, Q1, median, Q3, max) for a then b.  A segment without
    surface voxels contributes zeros."""
    moments, quantiles = [], []
    for mask in (mask_a, mask_b):
        try:
            v = shape_diameter_values(mask)
        except DomainError:
            moments += [0.0] * 4
            quantiles += [0.0] * 5
            continue
        moments += _moments(v)
        quantiles += list(np.percentile(v, [0, 25, 50, 75, 100]))
    return np.array(moments + quantiles, dtype=np.float64)


def boundary_points(mask_a: np.ndarray, mask_b: np.ndarray) -> np.ndarray:
    """Surface voxels of either segment (each against its own complement)."""
    fp = ndimage.generate_binary_structure(3, 1)
    out = np.zeros(mask_a.shape, dtype=bool)
    for m in (mask_a, mask_b):
        out |= m & ~ndimage.binary_erosion(m, structure=fp, border_value=1)
    return np.argwhere(out)


def shape_context_bins(points: np.ndarray, ref, radius: float) -> np.ndarray:
    """Flat (radial, polar, azimuth) bin index of each point relative to ``ref``."""
    d = np.asarray(points, dtype=np.float64) - np.asarray(ref, dtype=np.float64)
    r = np.linalg.norm(d, axis=1)
    edges = np.exp(np.linspace(0.0, np.log(max(radius, 1.0 + 1e-9)), SC_RADIAL + 1))
    rb = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, SC_RADIAL - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_t = np.where(r > 0, d[:, 2] / np.where(r > 0, r, 1.0), 1.0)
    theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
    pb = np.minimum((theta / (np.pi / SC_POLAR) + 1e-9).astype(int), SC_POLAR - 1)
    phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    ab = np.floor(phi / (2 * np.pi / SC_AZIMUTH) + 1e-9).astype(int) % SC_AZIMUTH
    return (rb * SC_POLAR + pb) * SC_AZIMUTH + ab


def shape_context_descriptor(points: np.ndarray, ref, radius: float) -> np.ndarray:
    """L1-normalised 720-bin log-polar histogram of ``points`` around ``ref``."""
    hist = np.zeros(SC_BINS)
    points = np.asarray(points).reshape(-1, 3)
    if points.shape[0] == 0:
        return hist
    np.add.at(hist, shape_context_bins(points, ref, radius), 1.0)
    return hist / hist.sum()


def vq_features(desc: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Triangle soft assignment of one descriptor against the codebook."""
    return triangle_encode(np.asarray(desc)[None], codebook)[0]
