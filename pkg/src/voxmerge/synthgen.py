"""Synthetic neurite-like volumes, corrupted affinity graphs and labelled edge sets.

The generator packs smooth random tubes, grows them until they touch, and
renders an image with dark membranes.  The affinity graph starts from the
ground truth and is then degraded: each pair of touching objects gets its
own leak level, and planar false cuts are inserted along every tube so that
the oversegmentation contains same-object (positive) edges.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.segmentation import expand_labels

from .edges import EdgeDataset, SegmentIndex, find_adjacent_pairs, label_edges
from .errors import GenerationError
from .segmentation import overseg_ladder
from .volume import affinity_to_boundary_map, save_volume

log = logging.getLogger(__name__)


@dataclass
class Tube:
    label: int
    points: np.ndarray  # (n, 3) centreline samples, unit spacing
    radii: np.ndarray

    @property
    def tangents(self) -> np.ndarray:
        t = np.gradient(self.points, axis=0) if len(self.points) > 1 else np.array([[1.0, 0, 0]])
        return t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)


@dataclass
class SynthConfig:
    dims: tuple = (128, 128, 128)
    n_tubes: int = 30
    radius_range: tuple = (3.0, 7.0)
    length_range: tuple = (40.0, 110.0)
    curvature: float = 0.15
    gap: int = 2
    fill: int = 12
    membrane_contrast: float = 0.4
    image_noise: float = 0.08
    image_blur: float = 0.7
    cut_spacing: tuple = (6.0, 11.0)
    cut_affinity: tuple = (0.0, 0.45)
    cut_band_contrast: float = 0.15
    contact_affinity: tuple = (0.0, 0.3)
    aff_blur: float = 0.0
    aff_noise: float = 0.05
    aff_noise_smooth: float = 1.5
    ladder: tuple = (0.9, 0.8, 0.7, 0.6, 0.5)
    final_grow: float = 0.2
    min_volume: int = 500
    saddle_ratio: float = 0.5
    purity: float = 0.5
    window_radius: int = 15
    seeds: tuple = (1, 2)
    max_tries: int = 4000


# -- tubes ---------------------------------------------------------------------

def _random_unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _curve(rng, dims, length, curvature, radius_range) -> tuple[np.ndarray, np.ndarray]:
    """Smooth random walk through a random interior point; stops at the volume border."""
    dims = np.asarray(dims, dtype=np.float64)
    start = rng.uniform(0.15, 0.85, 3) * dims
    d0 = _random_unit(rng)
    halves = []
    for sign in (1.0, -1.0):
        p, d, w = start.copy(), sign * d0, np.zeros(3)
        pts = []
        for _ in range(int(length / 2)):
            w = 0.9 * w + curvature * 0.3 * rng.standard_normal(3)
            d = d + w
            d /= np.linalg.norm(d)
            p = p + d
            if np.any(p < 0) or np.any(p > dims - 1):
                break
            pts.append(p.copy())
        halves.append(pts)
    pts = np.array(halves[1][::-1] + [start] + halves[0])
    lo, hi = radius_range
    s = np.arange(len(pts), dtype=np.float64)
    period = rng.uniform(25.0, 60.0)
    base = rng.uniform(lo, hi)
    amp = rng.uniform(0.0, 0.35) * (hi - lo)
    radii = np.clip(base + amp * np.sin(2 * np.pi * s / period + rng.uniform(0, 2 * np.pi)), lo, hi)
    return pts, radii


def rasterize_tube(points: np.ndarray, radii: np.ndarray, shape) -> np.ndarray:
    """Flat indices of voxels within ``radius(s)`` of some centreline sample (dense resampling)."""
    seg_len = np.linalg.norm(np.diff(points, axis=0), axis=1) if len(points) > 1 else np.zeros(0)
    fine_p, fine_r = [points[:1]], [radii[:1]]
    for i, L in enumerate(seg_len):
        k = max(int(np.ceil(L / 0.5)), 1)
        t = (np.arange(1, k + 1) / k)[:, None]
        fine_p.append(points[i] + t * (points[i + 1] - points[i]))
        fine_r.append(radii[i] + t[:, 0] * (radii[i + 1] - radii[i]))
    p = np.concatenate(fine_p)
    r = np.concatenate(fine_r)
    rmax = int(np.ceil(r.max())) + 1
    g = np.arange(-rmax, rmax + 1)
    offs = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    shape = np.asarray(shape)
    out = []
    for chunk in range(0, len(p), 64):
        pc, rc = p[chunk:chunk + 64], r[chunk:chunk + 64]
        q = np.floor(pc)[:, None, :].astype(np.int64) + offs[None]
        d2 = np.sum((q - pc[:, None, :]) ** 2, axis=-1)
        ok = (d2 <= rc[:, None] ** 2) & np.all((q >= 0) & (q < shape), axis=-1)
        out.append(np.ravel_multi_index(tuple(q[ok].T), tuple(shape)))
    return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def render_image(gt: np.ndarray, rng, contrast: float = 0.4, noise: float = 0.08, blur: float = 0.7) -> np.ndarray:
    """Per-object intensity, membranes darkened by ``contrast`` on both sides of each boundary."""
    n = int(gt.max())
    levels = np.r_[0.25, rng.uniform(0.55, 0.85, n)]
    img = levels[gt]
    fp = ndimage.generate_binary_structure(3, 1)
    lo = ndimage.grey_erosion(gt, footprint=fp, mode="nearest")
    hi = ndimage.grey_dilation(gt, footprint=fp, mode="nearest")
    membrane = (lo != gt) | (hi != gt)
    img = np.where(membrane, img - contrast, img)
    if blur > 0:
        img = ndimage.gaussian_filter(img, blur, mode="nearest")
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return img.astype(np.float32)


def generate_tubes(
    dims=(128, 128, 128),
    n_tubes: int = 40,
    radius_range=(3.0, 7.0),
    curvature: float = 0.15,
    seed: int = 0,
    length_range=None,
    gap: int = 2,
    fill: int = 0,
    noise: float = 0.08,
    contrast: float = 0.4,
    max_tries: int = 4000,
    return_tubes: bool = False,
):
    """Place ``n_tubes`` non-overlapping tubes, optionally grow them by ``fill``, render an image.

    Returns ``(gt, image)`` (plus the tube list with ``return_tubes``).
    Tubes are rejected when they come within ``gap`` voxels of one already
    placed.
    """
    dims = tuple(int(d) for d in dims)
    if min(dims) < 32:
        raise ValueError(f"dims must be at least 32^3, got {dims}")
    rng = np.random.default_rng(seed)
    length_range = length_range or (0.4 * max(dims), 1.0 * max(dims))
    gt = np.zeros(dims, dtype=np.uint32)
    clearance = np.full(dims, np.inf)  # distance to the nearest placed tube voxel
    tubes, tries = [], 0
    while len(tubes) < n_tubes:
        if tries >= max_tries:
            raise GenerationError(f"placed only {len(tubes)} of {n_tubes} tubes after {tries} attempts", len(tubes))
        tries += 1
        pts, radii = _curve(rng, dims, rng.uniform(*length_range), curvature, radius_range)
        if len(pts) < 8:
            continue
        # a voxel within r of a centre point is at least clearance - r - 1 from other tubes
        ci = np.clip(np.rint(pts).astype(np.int64), 0, np.asarray(dims) - 1)
        if np.any(clearance[ci[:, 0], ci[:, 1], ci[:, 2]] - radii <= gap + 1):
            continue
        idx = rasterize_tube(pts, radii, dims)
        if idx.size == 0:
            continue
        lab = len(tubes) + 1
        gt.flat[idx] = lab
        tubes.append(Tube(lab, pts, radii))
        clearance = ndimage.distance_transform_edt(gt == 0)
    if fill > 0:
        gt = expand_labels(gt, distance=fill).astype(np.uint32)
    image = render_image(gt, rng, contrast=contrast, noise=noise)
    return (gt, image, tubes) if return_tubes else (gt, image)


# -- affinities ------------------------------------------------------------------

def _shift_pairs(vol: np.ndarray, k: int):
    """Views ``(vol[p], vol[p + e_k])`` over voxels whose +k neighbour exists."""
    a = [slice(None)] * 3
    b = [slice(None)] * 3
    a[k], b[k] = slice(0, -1), slice(1, None)
    return vol[tuple(a)], vol[tuple(b)], tuple(a)


def binary_affinity(gt: np.ndarray) -> np.ndarray:
    """Channel ``k`` at ``p`` is 1 iff ``p`` and ``p + e_k`` share a nonzero label."""
    gt = np.asarray(gt)
    aff = np.zeros((3,) + gt.shape, dtype=np.float32)
    for k in range(3):
        u, v, sl = _shift_pairs(gt, k)
        aff[(k,) + sl] = (u == v) & (u > 0)
    return aff


def synth_affinity(
    gt: np.ndarray, noise: float = 0.0, blur: float = 0.0, seed: int = 0, base=None, noise_smooth: float = 0.0
) -> np.ndarray:
    """Blurred, noisy version of the ground-truth affinity graph, clipped to [0, 1].

    ``base`` replaces the binary graph when given (e.g. after boundary edits).
    With ``noise_smooth > 0`` the noise is Gaussian-filtered with that sigma
    and rescaled to standard deviation ``noise``.
    """
    aff = binary_affinity(gt) if base is None else np.array(base, dtype=np.float32)
    if blur > 0:
        aff = np.stack([ndimage.gaussian_filter(c.astype(np.float64), blur, mode="nearest") for c in aff])
    if noise > 0:
        n = np.random.default_rng(seed).normal(0.0, 1.0, aff.shape)
        if noise_smooth > 0:
            n = np.stack([ndimage.gaussian_filter(c, noise_smooth, mode="wrap") for c in n])
            n /= n.std()
        aff = aff + noise * n
    return np.clip(aff, 0.0, 1.0).astype(np.float32)


def apply_contact_levels(aff: np.ndarray, gt: np.ndarray, levels, rng) -> dict:
    """Give every pair of touching objects its own boundary affinity drawn from ``levels``."""
    keys = []
    for k in range(3):
        u, v, _ = _shift_pairs(gt, k)
        sel = (u != v) & (u > 0) & (v > 0)
        keys.append(np.minimum(u[sel], v[sel]).astype(np.int64) << 32 | np.maximum(u[sel], v[sel]).astype(np.int64))
    uniq = np.unique(np.concatenate(keys)) if keys else np.zeros(0, np.int64)
    values = rng.uniform(levels[0], levels[1], uniq.size)
    for k in range(3):
        u, v, sl = _shift_pairs(gt, k)
        sel = (u != v) & (u > 0) & (v > 0)
        ch = aff[(k,) + sl]
        ch[sel] = values[np.searchsorted(uniq, keys[k])]
        aff[(k,) + sl] = ch
    return {int(key): float(v) for key, v in zip(uniq, values)}


def plan_cuts(tubes, spacing, rng) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """``(label, point, normal)`` planes spaced along each centreline, normals near the tangent."""
    cuts = []
    for t in tubes:
        tang = t.tangents
        s = rng.uniform(*spacing) / 2
        while s < len(t.points) - 2:
            i = int(s)
            n = tang[i] + 0.15 * rng.standard_normal(3)
            cuts.append((t.label, t.points[i].copy(), n / np.linalg.norm(n)))
            s += rng.uniform(*spacing)
    return cuts


def apply_cuts(aff, gt, image, cuts, radius: float, levels, band: float, rng) -> None:
    """Lower affinities crossing each cut plane (inside its object, within ``radius``) and darken the plane."""
    shape = np.asarray(gt.shape)
    r = int(np.ceil(radius)) + 1
    for lab, o, n in cuts:
        c = np.floor(o).astype(np.int64)
        lo = np.maximum(c - r, 0)
        hi = np.minimum(c + r + 2, shape)
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        g = np.asarray(gt[sl]) == lab
        coords = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij"), 0).astype(np.float64)
        rel = coords - o[:, None, None, None]
        side = np.tensordot(n, rel, axes=(0, 0)) >= 0
        near = np.sum(rel**2, axis=0) <= radius**2
        value = rng.uniform(*levels)
        for k in range(3):
            ga, gb, s2 = _shift_pairs(g, k)
            sa, sb, _ = _shift_pairs(side, k)
            na, _, _ = _shift_pairs(near, k)
            cross = ga & gb & (sa != sb) & na
            if cross.any():
                view = aff[k][sl][s2]
                view[cross] = np.minimum(view[cross], value)
        plane = g & near & (np.abs(np.tensordot(n, rel, axes=(0, 0))) < 0.5)
        image[sl][plane] -= band


# -- benchmark -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class SynthVolume:
    name: str
    seed: int
    gt: np.ndarray
    image: np.ndarray
    aff: np.ndarray
    seg: np.ndarray
    edges: EdgeDataset
    files: dict = field(default_factory=dict)


def make_volume(cfg: SynthConfig, seed: int, name: str = "vol") -> SynthVolume:
    """Generate, corrupt, oversegment and label one volume."""
    stage = "generate"
    try:
        gt, image, tubes = generate_tubes(
            cfg.dims, cfg.n_tubes, cfg.radius_range, cfg.curvature, seed, cfg.length_range, cfg.gap, cfg.fill,
            cfg.image_noise, cfg.membrane_contrast, cfg.max_tries, return_tubes=True,
        )
        stage = "affinity"
        rng = np.random.default_rng([seed, 1])
        base = binary_affinity(gt)
        apply_contact_levels(base, gt, cfg.contact_affinity, rng)
        cuts = plan_cuts(tubes, cfg.cut_spacing, rng)
        apply_cuts(base, gt, image, cuts, cfg.radius_range[1] + cfg.fill + 2, cfg.cut_affinity, cfg.cut_band_contrast, rng)
        aff = synth_affinity(gt, cfg.aff_noise, cfg.aff_blur, seed=int(rng.integers(2**31)), base=base,
                             noise_smooth=cfg.aff_noise_smooth)
        stage = "overseg"
        seg = overseg_ladder(aff, cfg.ladder, cfg.final_grow, True, cfg.min_volume, cfg.saddle_ratio)
        stage = "edges"
        pairs = find_adjacent_pairs(seg)
        ds = label_edges(seg, gt, pairs, cfg.purity, cfg.window_radius, split=name, index=SegmentIndex(seg))
    except Exception as exc:
        raise GenerationError(f"{name}: stage {stage} failed: {exc}") from exc
    ds.meta.update({"seed": seed, "volume": name})
    return SynthVolume(name, seed, gt, image.astype(np.float32), aff, seg, ds)


def save_synth_volume(v: SynthVolume, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "image": out / f"{v.name}_image.vol",
        "gt": out / f"{v.name}_gt.vol",
        "aff": out / f"{v.name}_aff.vol",
        "seg": out / f"{v.name}_seg.vol",
        "edges": out / f"{v.name}_edges.jsonl",
    }
    save_volume(v.image, files["image"])
    save_volume(v.gt.astype(np.uint32), files["gt"])
    save_volume(v.aff, files["aff"])
    save_volume(v.seg.astype(np.uint32), files["seg"])
    v.edges.save(files["edges"])
    v.files = {k: str(p) for k, p in files.items()}
    return v.files


def write_manifest(out_dir, cfg: SynthConfig, volumes) -> Path:
    out = Path(out_dir)
    entries = []
    for v in volumes:
        for kind, p in sorted(v.files.items()):
            entries.append({"volume": v.name, "kind": kind, "path": Path(p).name, "sha256": sha256_file(p)})
    manifest = {
        "config": asdict(cfg),
        "seeds": {v.name: v.seed for v in volumes},
        "files": entries,
        "counts": {v.name: v.edges.counts for v in volumes},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def make_benchmark(cfg: SynthConfig | None = None, out_dir=None) -> tuple[SynthVolume, SynthVolume]:
    """Train and test volumes from two independent seeds; written with a manifest when ``out_dir`` is set."""
    cfg = cfg or SynthConfig()
    if len(cfg.seeds) != 2 or cfg.seeds[0] == cfg.seeds[1]:
        raise ValueError(f"need two distinct seeds, got {cfg.seeds}")
    vols = []
    for name, seed in zip(("train", "test"), cfg.seeds):
        log.info("generating %s volume (seed %d)", name, seed)
        vols.append(make_volume(cfg, int(seed), name))
    if out_dir is not None:
        for v in vols:
            save_synth_volume(v, out_dir)
        write_manifest(out_dir, cfg, vols)
    return vols[0], vols[1]


def boundary_map(aff: np.ndarray) -> np.ndarray:
    return affinity_to_boundary_map(aff)
