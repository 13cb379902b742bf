"""Oversegmentation of affinity graphs by a watershed threshold ladder."""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.morphology import local_maxima
from skimage.segmentation import watershed

from . import _kernels
from .volume import check_affinity

DEFAULT_LADDER = (0.9, 0.8, 0.7, 0.6, 0.5)


def relabel_sequential(seg: np.ndarray) -> np.ndarray:
    """Renumber labels 1..L in order of each label's lexicographically first voxel."""
    flat = np.asarray(seg).ravel()
    nz = np.flatnonzero(flat)
    out = np.zeros(flat.shape, dtype=np.int32)
    if nz.size == 0:
        return out.reshape(seg.shape)
    labs = flat[nz]
    uniq, first = np.unique(labs, return_index=True)
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(uniq.max()) + 1, dtype=np.int32)
    lut[uniq[order]] = np.arange(1, uniq.size + 1, dtype=np.int32)
    out[nz] = lut[labs]
    return out.reshape(seg.shape)


def components_above(aff: np.ndarray, t: float, allowed: np.ndarray | None = None) -> np.ndarray:
    """Connected components of the graph keeping edges with affinity > t.

    Voxels with no surviving edge stay unassigned (0).  Labels are numbered
    by their lexicographically smallest voxel.
    """
    aff = check_affinity(aff)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    if allowed is None:
        allowed = np.ones(aff.shape[1:], dtype=bool)
    labels, _ = _kernels.components_kernel(
        np.ascontiguousarray(aff, dtype=np.float32), np.float32(t), np.ascontiguousarray(allowed, dtype=bool)
    )
    return labels


def grow_watershed(seg: np.ndarray, aff: np.ndarray, t: float) -> np.ndarray:
    """Grow existing labels into unassigned voxels along edges with affinity > t.

    Edges are processed in order of decreasing affinity, then increasing
    label, then increasing voxel index.  Assigned voxels never change.
    """
    aff = check_affinity(aff)
    if seg.shape != aff.shape[1:]:
        raise ValueError(f"segmentation shape {seg.shape} does not match affinity {aff.shape[1:]}")
    return _kernels.grow_kernel(
        np.ascontiguousarray(seg, dtype=np.int32), np.ascontiguousarray(aff, dtype=np.float32), np.float32(t)
    )


def overseg_ladder(
    aff: np.ndarray,
    add_thresholds=DEFAULT_LADDER,
    final_grow: float = 0.2,
    break_objects: bool = True,
    min_volume: int = 500,
    saddle_ratio: float = 0.5,
) -> np.ndarray:
    """Threshold-ladder oversegmentation.

    Components at the first threshold are grown to the next one, new
    components are added where nothing is assigned yet, and so on down the
    ladder.  Optionally large objects are split at distance-transform
    saddles before a final grow to ``final_grow``.
    """
    aff = check_affinity(aff)
    ts = [float(t) for t in add_thresholds]
    if not ts or any(not 0.0 <= t <= 1.0 for t in ts + [final_grow]):
        raise ValueError("ladder thresholds must lie in [0, 1]")
    if any(b >= a for a, b in zip(ts, ts[1:])) or final_grow >= ts[-1]:
        raise ValueError(f"ladder must be strictly decreasing, got {ts} then {final_grow}")
    seg = components_above(aff, ts[0])
    for t in ts[1:]:
        seg = grow_watershed(seg, aff, t)
        fresh = components_above(aff, t, allowed=seg == 0)
        if fresh.any():
            seg = np.where(fresh > 0, fresh + seg.max(), seg).astype(np.int32)
    if break_objects:
        seg = break_by_distance_transform(seg, min_volume=min_volume, saddle_ratio=saddle_ratio)
    seg = grow_watershed(seg, aff, final_grow)
    return relabel_sequential(seg)


def _regional_maxima(dt: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, int]:
    # plateaus with no higher neighbour; a flat ridge rising into a larger peak is not one
    peak = local_maxima(dt, connectivity=3, allow_borders=True) & mask
    return ndimage.label(peak, structure=np.ones((3, 3, 3)))


def _split_object(mask: np.ndarray, saddle_ratio: float) -> np.ndarray | None:
    """Partition a single object at deep distance-transform saddles, or None."""
    dt = ndimage.distance_transform_edt(mask)
    markers, n = _regional_maxima(dt, mask)
    if n < 2:
        return None
    basins = watershed(-dt, markers, mask=mask, connectivity=1)
    peaks = ndimage.maximum(dt, labels=basins, index=np.arange(1, n + 1))
    peak = np.concatenate([[0.0], np.asarray(peaks, dtype=np.float64)])
    # saddle between adjacent basins = highest min(dt) across their shared faces
    saddles = {}
    for axis in range(3):
        a = np.moveaxis(basins, axis, 0)
        d = np.moveaxis(dt, axis, 0)
        la, lb = a[:-1], a[1:]
        sel = (la != lb) & (la > 0) & (lb > 0)
        if not sel.any():
            continue
        lo = np.minimum(la[sel], lb[sel])
        hi = np.maximum(la[sel], lb[sel])
        val = np.minimum(d[:-1][sel], d[1:][sel])
        key = lo.astype(np.int64) * (n + 1) + hi
        order = np.lexsort((val, key))
        key, val = key[order], val[order]
        last = np.r_[key[1:] != key[:-1], True]
        for k, v in zip(key[last], val[last]):
            k = int(k)
            saddles[k] = max(saddles.get(k, -1.0), float(v))
    parent = list(range(n + 1))
    top = peak.copy()

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for k, s in sorted(saddles.items(), key=lambda kv: (-kv[1], kv[0])):
        i, j = find(k // (n + 1)), find(k % (n + 1))
        if i == j:
            continue
        if s >= saddle_ratio * max(top[i], top[j]):
            lo, hi = min(i, j), max(i, j)
            parent[hi] = lo
            top[lo] = max(top[lo], top[hi])
    roots = np.array([find(i) for i in range(n + 1)])
    if np.unique(roots[1:]).size < 2:
        return None
    return roots[basins] * (basins > 0)


def break_by_distance_transform(seg: np.ndarray, min_volume: int = 500, saddle_ratio: float = 0.5) -> np.ndarray:
    """Split large objects whose distance transform has well-separated peaks.

    Objects with at least ``min_volume`` voxels are examined; two regional
    maxima stay apart when the saddle between them is below
    ``saddle_ratio`` times the larger peak.  Output labels are compacted.
    """
    seg = np.asarray(seg)
    out = seg.astype(np.int32, copy=True)
    nxt = int(out.max()) + 1
    counts = np.bincount(seg.ravel())
    slices = ndimage.find_objects(seg)
    for lab, sl in enumerate(slices, start=1):
        if sl is None or counts[lab] < min_volume:
            continue
        lo = [max(s.start - 1, 0) for s in sl]
        hi = [min(s.stop + 1, n) for s, n in zip(sl, seg.shape)]
        box = tuple(slice(a, b) for a, b in zip(lo, hi))
        mask = seg[box] == lab
        parts = _split_object(mask, saddle_ratio)
        if parts is None:
            continue
        sub = out[box]
        ids = np.unique(parts[parts > 0])
        lut = np.zeros(int(ids.max()) + 1, dtype=np.int64)
        lut[ids[1:]] = np.arange(nxt, nxt + ids.size - 1)
        moved = lut[parts]
        sub[moved > 0] = moved[moved > 0]
        nxt += ids.size - 1
    return relabel_sequential(out)
