"""Foveated soft-threshold encoding and static/dynamic pooling regions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..volume import crop_padded, downsample_mean
from .dictionary import CONTRAST_EPS, DictPair, EncoderConfig, patch_grid, soft_threshold_codes

POOL_KINDS = ("midpoint", "static-all", "dyn-obj", "dyn-bnd")


@dataclass
class ChannelWindow:
    """A (C, nx, ny, nz) channel stack whose voxel [:, 0, 0, 0] sits at ``origin`` in the volume."""

    data: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.int64)


def _code_grid(win: ChannelWindow, scale: int, lo: np.ndarray, hi: np.ndarray, atoms, alpha, patch) -> np.ndarray:
    """Codes (2K, *box) for scale-``scale`` grid cells ``lo..hi`` (inclusive), float32."""
    half = patch // 2
    start = scale * (lo - half)
    stop = scale * (hi + half + 1)
    raw = crop_padded(win.data, start - win.origin, stop - start, 0.0)
    ch = downsample_mean(raw.astype(np.float32), scale).astype(np.float32)
    g = patch_grid(ch, patch)
    shape = g.shape[:3]
    x = g.reshape(-1, g.shape[-1])
    x = x - x.mean(axis=1, keepdims=True)
    x /= np.sqrt(np.einsum("ij,ij->i", x, x) / x.shape[1])[:, None] + CONTRAST_EPS
    codes = soft_threshold_codes(x, atoms.astype(np.float32), np.float32(alpha))
    return np.ascontiguousarray(codes.T).reshape((codes.shape[1],) + shape)


def _box_max(grid: np.ndarray, radius: int) -> np.ndarray:
    """Max over the Chebyshev ball of ``radius`` in the last three axes, clipped at the grid edge."""
    out = grid
    for ax in (1, 2, 3):
        n = out.shape[ax]
        acc = out.copy()
        for k in range(1, radius + 1):
            if k >= n:
                break
            lo = [slice(None)] * 4
            hi = [slice(None)] * 4
            lo[ax], hi[ax] = slice(0, n - k), slice(k, n)
            np.maximum(acc[tuple(lo)], out[tuple(hi)], out=acc[tuple(lo)])
            np.maximum(acc[tuple(hi)], out[tuple(lo)], out=acc[tuple(hi)])
        out = acc
    return out


@dataclass
class CodeGrids:
    """Centre and foveated codes per scale over a box of grid cells."""

    parts: dict  # scale -> (centre (2K, n), fov (2K, n), lo cell, box shape)

    def lookup(self, points: np.ndarray, scale: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        centre, fov, lo, shape = self.parts[scale]
        rel = np.floor_divide(points, scale) - lo
        if np.any(rel < 0) or np.any(rel >= np.asarray(shape)):
            raise ValueError("points fall outside the encoded box")
        return centre, fov, np.ravel_multi_index(tuple(rel.T), shape)


def encode_grids(win: ChannelWindow, lo, hi, dicts: DictPair, cfg: EncoderConfig) -> CodeGrids:
    """Encode every location in the volume-coordinate box ``lo..hi`` (inclusive) at each scale.

    Foveated codes are exact for every location in the box: the centre codes
    are computed ``fovea`` cells beyond it.
    """
    dicts.check()
    lo, hi = np.asarray(lo, dtype=np.int64), np.asarray(hi, dtype=np.int64)
    parts = {}
    for s in cfg.scales:
        clo = np.floor_divide(lo, s) - cfg.fovea
        chi = np.floor_divide(hi, s) + cfg.fovea
        grid = _code_grid(win, s, clo, chi, dicts[s].atoms, dicts.alpha, cfg.patch)
        fov = _box_max(grid, cfg.fovea)
        f = cfg.fovea
        inner = (slice(None),) + (slice(f, -f if f else None),) * 3
        grid, fov = grid[inner], fov[inner]
        shape = grid.shape[1:]
        parts[s] = (grid.reshape(grid.shape[0], -1), fov.reshape(fov.shape[0], -1), clo + f, shape)
    return CodeGrids(parts)


def _points(points) -> np.ndarray:
    return np.asarray(points, dtype=np.int64).reshape(-1, 3)


def encode_points(win: ChannelWindow, points, dicts: DictPair, cfg: EncoderConfig) -> np.ndarray:
    """Full ``8K`` encoding at each of ``points`` (volume coordinates), as rows."""
    pts = _points(points)
    grids = encode_grids(win, pts.min(axis=0), pts.max(axis=0), dicts, cfg)
    parts = []
    for s in cfg.scales:
        centre, fov, flat = grids.lookup(pts, s)
        parts += [centre[:, flat].T, fov[:, flat].T]
    return np.concatenate(parts, axis=1).astype(np.float64)


def encode_location(win: ChannelWindow, point, dicts: DictPair, cfg: EncoderConfig) -> np.ndarray:
    """Centre code and radius-``fovea`` max-pooled code at both scales (length 8K)."""
    return encode_points(win, np.asarray(point)[None], dicts, cfg)[0]


def pooled_from_grids(grids: CodeGrids, region, cfg: EncoderConfig) -> np.ndarray:
    pts = _points(region)
    if pts.shape[0] == 0:
        return np.zeros(cfg.code_length)
    out = []
    for s in cfg.scales:
        centre, fov, flat = grids.lookup(pts, s)
        w = np.bincount(flat, minlength=centre.shape[1]).astype(np.float64)
        out += [centre @ w / pts.shape[0], fov @ w / pts.shape[0]]
    return np.concatenate(out)


def pooled_feature(win: ChannelWindow, region, dicts: DictPair, cfg: EncoderConfig, grids: CodeGrids | None = None) -> np.ndarray:
    """Mean of ``encode_location`` over the region's voxels; zeros for an empty region."""
    dicts.check()
    pts = _points(region)
    if pts.shape[0] == 0:
        return np.zeros(cfg.code_length)
    if grids is None:
        grids = encode_grids(win, pts.min(axis=0), pts.max(axis=0), dicts, cfg)
    return pooled_from_grids(grids, pts, cfg)


def _ball_dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    if not mask.any():
        return mask.copy()
    return ndimage.distance_transform_edt(~mask) <= radius


def make_pool_region(mask_a: np.ndarray, mask_b: np.ndarray, center, kind: str, radius: int) -> np.ndarray:
    """Voxels (window coordinates, lexicographic) to pool over.

    ``midpoint`` is the centre alone; ``static-all`` the cube of Chebyshev
    radius ``radius``; ``dyn-obj`` the cube restricted to either segment;
    ``dyn-bnd`` the cube restricted to where both segments, dilated by a
    ball of radius ``radius / 2``, overlap.
    """
    if kind not in POOL_KINDS:
        raise ValueError(f"unknown pooling kind {kind!r}; expected one of {POOL_KINDS}")
    c = np.asarray(center, dtype=np.int64)
    if kind == "midpoint":
        return c[None].copy()
    shape = np.asarray(mask_a.shape)
    lo = np.maximum(c - radius, 0)
    hi = np.minimum(c + radius + 1, shape)
    cube = np.zeros(mask_a.shape, dtype=bool)
    cube[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    if kind == "static-all":
        sel = cube
    elif kind == "dyn-obj":
        sel = cube & (mask_a | mask_b)
    else:
        sel = cube & _ball_dilate(mask_a, radius / 2.0) & _ball_dilate(mask_b, radius / 2.0)
    return np.argwhere(sel)
