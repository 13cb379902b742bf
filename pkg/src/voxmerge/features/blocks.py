"""Per-edge windowed context and the registry of named feature blocks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..augment import apply_isometry, apply_isometry_affinity
from ..edges import EdgeSample, interface_pixels
from ..errors import StateError
from ..learn.dictionary import DictPair, EncoderConfig
from ..learn.endtoend import end_to_end_length, end_to_end_vector
from ..learn.kmeans import Codebook
from ..learn.pooling import ChannelWindow, encode_grids, make_pool_region, pooled_feature
from ..volume import SubvolumeSpec, affinity_to_boundary_map, crop_padded
from . import boundary, geometry, image, levelset, shape


@dataclass
class VolumeSet:
    """The full volumes one dataset's edges refer to."""

    image: np.ndarray
    aff: np.ndarray
    seg: np.ndarray
    bm: np.ndarray | None = None
    sizes: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.aff = np.asarray(self.aff, dtype=np.float32)
        if self.bm is None:
            self.bm = affinity_to_boundary_map(self.aff)
        if self.sizes is None:
            self.sizes = np.bincount(np.asarray(self.seg).ravel().astype(np.int64))
        self.image_mean = float(self.image.mean(dtype=np.float64))

    @property
    def shape(self):
        return self.seg.shape


@dataclass
class Resources:
    """Trained artifacts some blocks need."""

    sc_codebook: Codebook | None = None
    sift_image_codebook: Codebook | None = None
    sift_aff_codebook: Codebook | None = None
    dicts: DictPair | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pool_radius: int = 10
    e2e_scales: tuple = ((5, 1),)


class EdgeContext:
    """Cubic windows of every volume around an edge's (jittered) centre, after its isometry.

    The window centre sits at ``(r, r, r)``; segment ``a`` and ``b`` follow
    the sample's (possibly swapped) order.  Derived quantities are computed
    on first use and memoised.
    """

    def __init__(self, vols: VolumeSet, edge: EdgeSample, radius: int | None = None):
        self.vols = vols
        self.edge = edge
        self.r = int(edge.window_radius if radius is None else radius)
        self.a, self.b = int(edge.a), int(edge.b)
        self.center_volume = np.clip(np.asarray(edge.center), 0, np.asarray(vols.shape) - 1)
        side = 2 * self.r + 1
        self.origin = self.center_volume - self.r
        g = edge.isometry
        self.image = apply_isometry(crop_padded(vols.image, self.origin, side, vols.image_mean), g)
        self.bm = apply_isometry(crop_padded(vols.bm, self.origin, side, 0.0), g)
        self.aff = apply_isometry_affinity(crop_padded(vols.aff, self.origin, side, 0.0), g)
        self.labels = apply_isometry(crop_padded(np.asarray(vols.seg), self.origin, side, 0), g)
        self.mask_a = self.labels == self.a
        self.mask_b = self.labels == self.b
        self.center = np.array([self.r] * 3)
        self.size_a = int(vols.sizes[self.a]) if self.a < vols.sizes.size else 0
        self.size_b = int(vols.sizes[self.b]) if self.b < vols.sizes.size else 0
        self._memo = {}

    @property
    def window(self) -> SubvolumeSpec:
        return SubvolumeSpec(tuple(int(c) for c in self.center), self.r)

    def memo(self, key, fn: Callable):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    @property
    def interface(self) -> np.ndarray:
        return self.memo("interface", lambda: interface_pixels(self.labels, self.a, self.b, self.window))

    def sdf(self) -> np.ndarray:
        return self.memo("sdf", lambda: shape.shape_diameter_features(self.mask_a, self.mask_b))

    def levelset(self) -> dict:
        return self.memo("levelset", self._levelset)

    def _levelset(self) -> dict:
        union = self.mask_a | self.mask_b
        field_, summary = levelset.orientation_field(union)
        gvf = levelset.gvf_field(self.bm)
        ca, cb = geometry.centroid(self.mask_a), geometry.centroid(self.mask_b)
        towards_b = np.einsum("c...,c->...", field_, cb - ca) >= 0
        v_ab = np.where(towards_b[None], field_, -field_)
        ev_a = levelset.evolve_level_set(self.mask_a, v_ab, gvf)
        ev_b = levelset.evolve_level_set(self.mask_b, -v_ab, gvf)
        return {
            "orientation": summary,
            "gvf": levelset.gvf_features(gvf, self.interface),
            "overlap": levelset.overlap_features(self.mask_a, self.mask_b, ev_a, ev_b),
        }

    def unsup_window(self, res: Resources) -> tuple[ChannelWindow, np.ndarray, np.ndarray, np.ndarray]:
        """Channel window (image, bm, union mask) wide enough for pooling at ``res.pool_radius``."""
        def build():
            cfg = res.encoder
            top = max(cfg.scales)
            ru = res.pool_radius + top * (cfg.fovea + cfg.patch // 2 + 2)
            side = 2 * ru + 1
            origin = self.center_volume - ru
            g = self.edge.isometry
            img = apply_isometry(crop_padded(self.vols.image, origin, side, self.vols.image_mean), g)
            bm = apply_isometry(crop_padded(self.vols.bm, origin, side, 0.0), g)
            labs = apply_isometry(crop_padded(np.asarray(self.vols.seg), origin, side, 0), g)
            ma, mb = labs == self.a, labs == self.b
            data = np.stack([img, bm, (ma | mb).astype(np.float32)])
            return ChannelWindow(data, origin), ma, mb, np.array([ru] * 3)
        return self.memo("unsup_window", build)


# -- block registry -----------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    name: str
    length: Callable[[Resources], int]
    compute: Callable[[EdgeContext, Resources], np.ndarray]
    isometry_invariant: bool = False
    needs: tuple = ()


def _need(res: Resources, attr: str):
    v = getattr(res, attr)
    if v is None or (hasattr(v, "trained") and not v.trained):
        raise StateError(f"feature block needs a trained {attr}")
    return v


def _boundary(ctx, res):
    return np.concatenate([boundary.boundary_stats(ctx.bm, ctx.interface), boundary.derivative_stats(ctx.bm, ctx.interface)])


def _shape_context(ctx, res):
    cb = _need(res, "sc_codebook")
    pts = shape.boundary_points(ctx.mask_a, ctx.mask_b)
    desc = shape.shape_context_descriptor(pts, ctx.center, ctx.r * np.sqrt(3.0))
    return shape.vq_features(desc, cb)


def shape_context_descriptor_for(ctx) -> np.ndarray:
    pts = shape.boundary_points(ctx.mask_a, ctx.mask_b)
    return shape.shape_context_descriptor(pts, ctx.center, ctx.r * np.sqrt(3.0))


def sift_descriptors_for(ctx) -> tuple[np.ndarray, np.ndarray]:
    return image.sift3d_descriptors(ctx.image, ctx.center), image.sift3d_descriptors(ctx.bm, ctx.center)


def _sift(ctx, res):
    ci, ca = _need(res, "sift_image_codebook"), _need(res, "sift_aff_codebook")
    di, da = ctx.memo("sift", lambda: sift_descriptors_for(ctx))
    return image.sift_vq_features(di, da, ci, ca)


def _unsup(kind):
    def compute(ctx, res):
        dicts = _need(res, "dicts")
        win, ma, mb, c = ctx.unsup_window(res)
        region = make_pool_region(ma, mb, c, kind, res.pool_radius) + win.origin
        if kind == "midpoint":
            return pooled_feature(win, region, dicts, res.encoder)
        grids = ctx.memo("unsup_grids", lambda: encode_grids(
            win, win.origin + c - res.pool_radius, win.origin + c + res.pool_radius, dicts, res.encoder))
        return pooled_feature(win, region, dicts, res.encoder, grids)
    return compute


def _e2e(ctx, res):
    return end_to_end_vector(ctx.image, ctx.bm, ctx.mask_a, ctx.mask_b, ctx.center, res.e2e_scales,
                             image_pad=ctx.vols.image_mean)


def _fixed(n):
    return lambda res: n


BLOCKS: dict[str, Block] = {}


def register(block: Block) -> Block:
    if block.name in BLOCKS:
        raise ValueError(f"duplicate block name {block.name!r}")
    BLOCKS[block.name] = block
    return block


for _b in (
    Block("boundary", _fixed(30), _boundary),
    Block("size", _fixed(4), lambda c, r: geometry.size_features(c.size_a, c.size_b), True),
    Block("proximity", _fixed(1), lambda c, r: geometry.proximity_feature(c.mask_a, c.mask_b), True),
    Block("growth", _fixed(2), lambda c, r: geometry.growth_features(c.mask_a, c.mask_b, c.aff, c.center), True),
    Block("rays", _fixed(42), lambda c, r: geometry.ray_features(c.mask_a, c.mask_b, c.bm)),
    Block("angles", _fixed(33), lambda c, r: geometry.angle_features(c.mask_a, c.mask_b, c.aff)),
    Block("hull", _fixed(8), lambda c, r: geometry.convex_hull_features(c.mask_a, c.mask_b), True),
    Block("sdf-moments", _fixed(8), lambda c, r: c.sdf()[:8], True),
    Block("sdf-quantiles", _fixed(10), lambda c, r: c.sdf()[8:], True),
    Block("shape-context", lambda r: r.sc_codebook.k if r.sc_codebook and r.sc_codebook.trained else 20,
          _shape_context, needs=("sc_codebook",)),
    Block("ls-overlap", _fixed(6), lambda c, r: c.levelset()["overlap"]),
    Block("gvf", _fixed(4), lambda c, r: c.levelset()["gvf"]),
    Block("orientation", _fixed(6), lambda c, r: c.levelset()["orientation"]),
    Block("sift", lambda r: (r.sift_image_codebook.k + r.sift_aff_codebook.k)
          if r.sift_image_codebook and r.sift_aff_codebook else 100, _sift,
          needs=("sift_image_codebook", "sift_aff_codebook")),
    Block("image-stats", _fixed(40), lambda c, r: image.image_stats_features(c.image, c.interface, c.window)),
    Block("unsup-midpoint", lambda r: r.encoder.code_length, _unsup("midpoint"), needs=("dicts",)),
    Block("unsup-all", lambda r: r.encoder.code_length, _unsup("static-all"), needs=("dicts",)),
    Block("unsup-dyn-obj", lambda r: r.encoder.code_length, _unsup("dyn-obj"), needs=("dicts",)),
    Block("unsup-dyn-bnd", lambda r: r.encoder.code_length, _unsup("dyn-bnd"), needs=("dicts",)),
    Block("e2e", lambda r: end_to_end_length(r.e2e_scales), _e2e),
):
    register(_b)

HAND_BLOCKS = (
    "boundary", "size", "proximity", "growth", "rays", "angles", "hull", "sdf-moments", "sdf-quantiles",
    "shape-context", "ls-overlap", "gvf", "orientation", "sift", "image-stats",
)


def block_length(name: str, res: Resources | None = None) -> int:
    return BLOCKS[name].length(res or Resources())


def compute_block(name: str, ctx: EdgeContext, res: Resources | None = None) -> np.ndarray:
    res = res or Resources()
    v = np.asarray(BLOCKS[name].compute(ctx, res), dtype=np.float64).ravel()
    n = block_length(name, res)
    if v.size != n:
        raise AssertionError(f"block {name} produced {v.size} values, expected {n}")
    return v


def edge_features(vols: VolumeSet, edge: EdgeSample, names, res: Resources | None = None) -> dict:
    """Every requested block for one edge, sharing one context."""
    ctx = EdgeContext(vols, edge)
    return {n: compute_block(n, ctx, res) for n in names}
