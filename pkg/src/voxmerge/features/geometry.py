"""Object-level features of a segment pair: size, proximity, growth, rays, angles, convex hull."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .. import _kernels
from ..errors import DomainError
from ..segmentation import grow_watershed

RAY_THRESHOLDS = (0.9, 0.7, 0.5, 0.3, 0.1)
ANGLE_THRESHOLDS = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)
N_RAYS = 42
RAY_STEP = 0.5
ANGLE_SENTINEL = np.pi / 4


def size_features(vol_a: int, vol_b: int) -> np.ndarray:
    """``[vol_a, vol_b, ln vol_a, ln vol_b]``."""
    if vol_a < 1 or vol_b < 1:
        raise DomainError(f"segment volumes must be positive, got {vol_a}, {vol_b}")
    return np.array([vol_a, vol_b, np.log(vol_a), np.log(vol_b)], dtype=np.float64)


def _surface(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with a 6-neighbour outside it (array border counts as inside)."""
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1), border_value=1)
    return np.argwhere(mask & ~inner)


def proximity_feature(mask_a: np.ndarray, mask_b: np.ndarray) -> np.ndarray:
    """Shortest Euclidean distance between voxel centres of the two masks."""
    pa, pb = _surface(mask_a), _surface(mask_b)
    if pa.size == 0 or pb.size == 0:
        raise DomainError("proximity needs two non-empty masks")
    dist, _ = cKDTree(pb).query(pa, k=1)
    return np.array([float(dist.min())])


def window_diagonal(shape) -> float:
    return float(np.sqrt(sum((s - 1) ** 2 for s in shape)))


def growth_features(mask_a: np.ndarray, mask_b: np.ndarray, aff: np.ndarray, dp) -> np.ndarray:
    """Affinity at which the two seeded basins first meet and the meeting point's distance to ``dp``.

    Never meeting inside the window gives ``[0, window diagonal]``.
    """
    shape = mask_a.shape
    labels = np.zeros(shape, dtype=np.int32)
    labels[mask_a] = 1
    labels[mask_b] = 2
    a, src, dst = _kernels.meet_kernel(labels, np.ascontiguousarray(aff, dtype=np.float32))
    if src < 0:
        return np.array([0.0, window_diagonal(shape)])
    u = np.array(np.unravel_index(src, shape))
    v = np.array(np.unravel_index(dst, shape))
    # nearer endpoint of the meeting edge; a rounded midpoint would not commute with reflections
    dp = np.asarray(dp)
    return np.array([float(a), float(min(np.linalg.norm(u - dp), np.linalg.norm(v - dp)))])


@lru_cache(maxsize=8)
def fibonacci_sphere(n: int = N_RAYS) -> np.ndarray:
    """``n`` near-uniform unit vectors on the sphere (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    d.setflags(write=False)
    return d


def centroid(mask: np.ndarray) -> np.ndarray:
    return np.argwhere(mask).mean(axis=0)


def _ray_origin(mask: np.ndarray) -> np.ndarray:
    c = centroid(mask)
    return np.clip(c, 0, np.asarray(mask.shape) - 1).astype(np.float64)


def ray_features(
    mask_a: np.ndarray,
    mask_b: np.ndarray,
    bm: np.ndarray,
    thresholds=RAY_THRESHOLDS,
    directions: np.ndarray | None = None,
    step: float = RAY_STEP,
) -> np.ndarray:
    """42 ray statistics seeded from each segment's centroid.

    Layout, per seed segment (a then b): mean/std/max distance to the
    boundary map falling below each threshold; then mean/std/max distance
    to leaving the union mask; then mean/std/hit fraction of the length
    travelled through the other segment.
    """
    dirs = fibonacci_sphere() if directions is None else np.asarray(directions, dtype=np.float64)
    bm = np.ascontiguousarray(bm, dtype=np.float64)
    union = np.ascontiguousarray(mask_a | mask_b)
    thr_part, exit_part, pen_part = [], [], []
    for seed, other in ((mask_a, mask_b), (mask_b, mask_a)):
        origin = _ray_origin(seed)
        for t in thresholds:
            d = _kernels.march_threshold(bm, origin, dirs, float(t), step)
            thr_part += [d.mean(), d.std(), d.max()]
        d = _kernels.march_mask_exit(union, origin, dirs, step)
        exit_part += [d.mean(), d.std(), d.max()]
        d = _kernels.march_through(np.ascontiguousarray(other), origin, dirs, step)
        pen_part += [d.mean(), d.std(), float(np.mean(d > 0))]
    return np.array(thr_part + exit_part + pen_part)


def principal_axis(points: np.ndarray) -> np.ndarray | None:
    """Leading eigenvector of the second central moment matrix, or None if degenerate."""
    if points.shape[0] < 2:
        return None
    c = points - points.mean(axis=0)
    m = c.T @ c / points.shape[0]
    w, v = np.linalg.eigh(m)
    if w[-1] <= 1e-12:
        return None
    return v[:, -1]


def folded_angle(u: np.ndarray | None, v: np.ndarray) -> float:
    """Angle between two axes ignoring sign, in [0, pi/2]."""
    nv = np.linalg.norm(v)
    if u is None or nv < 1e-12:
        return ANGLE_SENTINEL
    c = abs(float(np.dot(u, v))) / (np.linalg.norm(u) * nv)
    return float(np.arccos(min(c, 1.0)))


def _angle_triplet(pa: np.ndarray, pb: np.ndarray) -> list[float]:
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        return [0.0, ANGLE_SENTINEL, ANGLE_SENTINEL]
    vc = pb.mean(axis=0) - pa.mean(axis=0)
    return [float(np.linalg.norm(vc)), folded_angle(principal_axis(pa), vc), folded_angle(principal_axis(pb), vc)]


def _downsample_mask(mask: np.ndarray) -> np.ndarray:
    s = np.asarray(mask.shape) // 2
    m = mask[: 2 * s[0], : 2 * s[1], : 2 * s[2]].reshape(s[0], 2, s[1], 2, s[2], 2)
    return m.mean(axis=(1, 3, 5)) >= 0.5


def angle_features(mask_a: np.ndarray, mask_b: np.ndarray, aff: np.ndarray, thresholds=ANGLE_THRESHOLDS) -> np.ndarray:
    """``[|v_c|, angle(v_o1, v_c), angle(v_o2, v_c)]`` for 2 + len(thresholds) mask variants.

    Variants: the masks as given, masks downsampled by two (lengths kept in
    full-resolution units), and masks grown by watershed to each threshold.
    """
    out = _angle_triplet(np.argwhere(mask_a).astype(float), np.argwhere(mask_b).astype(float))
    da, db = _downsample_mask(mask_a), _downsample_mask(mask_b)
    out += _angle_triplet(np.argwhere(da) * 2.0 + 0.5, np.argwhere(db) * 2.0 + 0.5)
    seeds = np.zeros(mask_a.shape, dtype=np.int32)
    seeds[mask_a] = 1
    seeds[mask_b] = 2
    aff = np.ascontiguousarray(aff, dtype=np.float32)
    grown = seeds
    for t in sorted(thresholds, reverse=True):
        grown = grow_watershed(grown, aff, t)  # growth to t extends growth to any higher t
        out += _angle_triplet(np.argwhere(grown == 1).astype(float), np.argwhere(grown == 2).astype(float))
    order = np.argsort(-np.asarray(thresholds), kind="stable")
    head, tail = out[:6], np.asarray(out[6:]).reshape(-1, 3)
    # report grown variants in the caller's threshold order
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return np.concatenate([head, tail[inv].ravel()])


def hull_mask(points: np.ndarray, shape, tol: float = 1e-9) -> np.ndarray:
    """Voxels of a grid of ``shape`` whose centres lie in the convex hull of ``points``.

    Degenerate (coplanar, collinear, single-point) sets are handled in
    their affine hull.  The hull boundary counts as inside.
    """
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros(shape, dtype=bool)
    lo = points.min(axis=0).astype(int)
    hi = points.max(axis=0).astype(int) + 1
    grid = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij"), axis=-1).reshape(-1, 3)
    origin = points.mean(axis=0)
    centred = points - origin
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(s > 1e-9 * max(s[0], 1.0))) if s.size else 0
    g = grid - origin
    if rank == 0:
        inside = np.all(np.abs(g) < 1e-9, axis=1)
    else:
        basis = vt[:rank]
        off = g - (g @ basis.T) @ basis
        in_plane = np.linalg.norm(off, axis=1) <= 1e-7
        proj_pts = centred @ basis.T
        proj_grid = g @ basis.T
        if rank == 1:
            inside = in_plane & (proj_grid[:, 0] >= proj_pts.min() - 1e-7) & (proj_grid[:, 0] <= proj_pts.max() + 1e-7)
        else:
            try:
                eq = ConvexHull(proj_pts).equations
            except QhullError:
                eq = ConvexHull(proj_pts, qhull_options="QJ").equations
            inside = in_plane & np.all(proj_grid @ eq[:, :-1].T + eq[:, -1] <= 1e-7, axis=1)
    sel = grid[inside]
    out[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return out


def convex_hull_features(mask_a: np.ndarray, mask_b: np.ndarray) -> np.ndarray:
    """Per segment: hull voxels inside / outside the segment and their log1p values (8)."""
    out = []
    for mask in (mask_a, mask_b):
        pts = np.argwhere(mask)
        if pts.shape[0] == 0:
            out += [0.0, 0.0, 0.0, 0.0]
            continue
        hull = hull_mask(pts, mask.shape)
        inside = float(np.count_nonzero(hull & mask))
        outside = float(np.count_nonzero(hull & ~mask))
        out += [inside, outside, np.log1p(inside), np.log1p(outside)]
    return np.array(out)
