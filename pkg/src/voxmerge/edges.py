"""Candidate supervoxel pairs, decision points, interfaces and edge datasets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DomainError
from .volume import SubvolumeSpec, crop_padded, window_origin

LABELS = ("pos", "neg", "unk")
DEFAULT_WINDOW_RADIUS = 15


@dataclass(frozen=True)
class DecisionPoint:
    point: tuple[int, int, int]
    distance: float
    p: tuple[int, int, int]  # closest voxel of the lower label
    q: tuple[int, int, int]  # closest voxel of the higher label


@dataclass(frozen=True)
class EdgeSample:
    id: int
    a: int
    b: int
    dp: tuple[int, int, int]
    label: str = "unk"
    window_radius: int = DEFAULT_WINDOW_RADIUS
    # augmentation state; identity by default
    isometry: int = 0
    jitter: tuple[int, int, int] = (0, 0, 0)

    @property
    def y(self) -> int:
        return 1 if self.label == "pos" else 0

    @property
    def swapped(self) -> bool:
        return self.a > self.b

    @property
    def center(self) -> tuple[int, int, int]:
        return tuple(int(c + j) for c, j in zip(self.dp, self.jitter))

    def to_json(self) -> dict:
        d = {"id": self.id, "a": self.a, "b": self.b, "dp": list(self.dp), "label": self.label}
        if self.isometry:
            d["iso"] = self.isometry
        if any(self.jitter):
            d["jit"] = list(self.jitter)
        return d

    @classmethod
    def from_json(cls, d: dict, window_radius: int = DEFAULT_WINDOW_RADIUS) -> "EdgeSample":
        if d["label"] not in LABELS:
            raise ValueError(f"unknown edge label {d['label']!r}")
        return cls(
            id=int(d["id"]), a=int(d["a"]), b=int(d["b"]), dp=tuple(int(v) for v in d["dp"]),
            label=d["label"], window_radius=window_radius, isometry=int(d.get("iso", 0)),
            jitter=tuple(int(v) for v in d.get("jit", (0, 0, 0))),
        )


@dataclass
class EdgeDataset:
    edges: list[EdgeSample]
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise ValueError("edge ids must be unique")

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def __getitem__(self, i):
        return self.edges[i]

    @property
    def counts(self) -> dict:
        c = {k: 0 for k in LABELS}
        for e in self.edges:
            c[e.label] += 1
        return c

    @property
    def y(self) -> np.ndarray:
        return np.array([e.y for e in self.edges], dtype=np.int64)

    def labeled(self) -> "EdgeDataset":
        return EdgeDataset([e for e in self.edges if e.label != "unk"], self.split, dict(self.meta))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.edges:
                fh.write(json.dumps(e.to_json()) + "\n")

    @classmethod
    def load(cls, path, split: str | None = None, window_radius: int = DEFAULT_WINDOW_RADIUS) -> "EdgeDataset":
        path = Path(path)
        with open(path) as fh:
            edges = [EdgeSample.from_json(json.loads(line), window_radius) for line in fh if line.strip()]
        return cls(edges, split or path.stem)


def find_adjacent_pairs(seg: np.ndarray, max_gap: int = 1) -> list[tuple[int, int]]:
    """Unordered nonzero label pairs with voxels at Chebyshev distance <= max_gap."""
    seg = np.asarray(seg)
    g = int(max_gap)
    found = set()
    for off in itertools.product(range(-g, g + 1), repeat=3):
        if off <= (0, 0, 0):
            continue  # each offset pair visited once
        src = tuple(slice(max(0, -o), s - max(0, o)) for o, s in zip(off, seg.shape))
        dst = tuple(slice(max(0, o), s - max(0, -o)) for o, s in zip(off, seg.shape))
        u, v = seg[src], seg[dst]
        sel = (u != v) & (u > 0) & (v > 0)
        if not sel.any():
            continue
        lo = np.minimum(u[sel], v[sel]).astype(np.int64)
        hi = np.maximum(u[sel], v[sel]).astype(np.int64)
        found.update(zip(*np.unique(np.stack([lo, hi]), axis=1)))
    return sorted((int(a), int(b)) for a, b in found)


class SegmentIndex:
    """Per-label surface voxel lists and KD-trees, built once per segmentation."""

    def __init__(self, seg: np.ndarray):
        self.seg = np.asarray(seg)
        fp = ndimage.generate_binary_structure(3, 1)
        lo = ndimage.grey_erosion(self.seg, footprint=fp, mode="nearest")
        hi = ndimage.grey_dilation(self.seg, footprint=fp, mode="nearest")
        surface = (self.seg > 0) & ((lo != self.seg) | (hi != self.seg))
        coords = np.argwhere(surface)  # lexicographic order
        labs = self.seg[surface]
        order = np.argsort(labs, kind="stable")
        coords, labs = coords[order], labs[order]
        uniq, start = np.unique(labs, return_index=True)
        stop = np.r_[start[1:], labs.size]
        self._surface = {int(l): coords[s:e] for l, s, e in zip(uniq, start, stop)}
        self.sizes = np.bincount(self.seg.ravel())
        self._trees = {}

    def surface(self, lab: int) -> np.ndarray:
        if lab <= 0 or lab >= self.sizes.size or self.sizes[lab] == 0:
            raise DomainError(f"label {lab} not present in segmentation")
        return self._surface[lab]

    def tree(self, lab: int) -> cKDTree:
        if lab not in self._trees:
            self._trees[lab] = cKDTree(self.surface(lab))
        return self._trees[lab]


def compute_decision_point(seg: np.ndarray, a: int, b: int, index: SegmentIndex | None = None) -> DecisionPoint:
    """Rounded midpoint of the shortest segment joining labels a and b.

    Only surface voxels can realise the minimum, so the search runs over
    surfaces.  Ties go to the lexicographically smallest ``(p, q)`` with
    ``p`` in the lower label, which makes the result symmetric in (a, b).
    """
    index = index or SegmentIndex(seg)
    lo, hi = (a, b) if a < b else (b, a)
    if lo == hi:
        raise DomainError("decision point needs two distinct labels")
    ps = index.surface(lo)
    qs = index.surface(hi)
    dist, _ = index.tree(hi).query(ps, k=1)
    # integer squared distances make the tie test exact
    cand_d2 = np.rint(dist.astype(np.float64) ** 2).astype(np.int64)
    best = int(cand_d2.min())
    best_ps = ps[cand_d2 == best]
    pairs = []
    tree = index.tree(hi)
    for p in best_ps:
        for j in tree.query_ball_point(p, np.sqrt(best) + 1e-6):
            q = qs[j]
            if int(((q - p) ** 2).sum()) == best:
                pairs.append(tuple(p) + tuple(q))
    pq = min(pairs)
    p, q = np.array(pq[:3]), np.array(pq[3:])
    mid = (p + q + 1) // 2  # round half up
    return DecisionPoint(tuple(int(v) for v in mid), float(np.sqrt(best)), tuple(int(v) for v in p), tuple(int(v) for v in q))


def interface_pixels(seg: np.ndarray, a: int, b: int, window: SubvolumeSpec) -> np.ndarray:
    """Interface voxels between a and b inside ``window``, as (N, 3) volume coordinates.

    A voxel is on the interface when it belongs to neither segment and is
    26-adjacent to both, or when it belongs to ``a`` and is 6-adjacent to
    ``b``.  Rows are in lexicographic order.
    """
    lo = window_origin(window)
    side = 2 * window.radius + 1
    labs = crop_padded(np.asarray(seg), lo - 1, side + 2, 0)
    A, B = labs == a, labs == b
    near_a = ndimage.binary_dilation(A, structure=np.ones((3, 3, 3), bool))
    near_b = ndimage.binary_dilation(B, structure=np.ones((3, 3, 3), bool))
    touch_b = ndimage.binary_dilation(B, structure=ndimage.generate_binary_structure(3, 1))
    iface = (~A & ~B & near_a & near_b) | (A & touch_b)
    iface = iface[1:-1, 1:-1, 1:-1]
    pts = np.argwhere(iface) + lo
    inside = np.all((pts >= 0) & (pts < np.asarray(seg.shape)), axis=1)
    return pts[inside]


def majority_mapping(seg: np.ndarray, gt: np.ndarray) -> tuple[dict, dict]:
    """Map each supervoxel to its majority ground-truth object and that object's share."""
    s = np.asarray(seg).ravel().astype(np.int64)
    g = np.asarray(gt).ravel().astype(np.int64)
    sel = s > 0
    s, g = s[sel], g[sel]
    if s.size == 0:
        return {}, {}
    key = s * (int(g.max()) + 1) + g
    uniq, cnt = np.unique(key, return_counts=True)
    sl, gl = uniq // (int(g.max()) + 1), uniq % (int(g.max()) + 1)
    size = np.bincount(s)
    # sort by (supervoxel, -count, gt label) so the first row per supervoxel wins
    order = np.lexsort((gl, -cnt, sl))
    sl, gl, cnt = sl[order], gl[order], cnt[order]
    first = np.r_[True, sl[1:] != sl[:-1]]
    mapping = {int(a): int(b) for a, b in zip(sl[first], gl[first])}
    purity = {int(a): float(c) / float(size[a]) for a, c in zip(sl[first], cnt[first])}
    return mapping, purity


def label_edges(
    seg: np.ndarray,
    gt: np.ndarray,
    pairs,
    purity_threshold: float = 0.5,
    window_radius: int = DEFAULT_WINDOW_RADIUS,
    split: str = "train",
    index: SegmentIndex | None = None,
) -> EdgeDataset:
    """Label candidate pairs against a ground-truth segmentation."""
    if np.shape(seg) != np.shape(gt):
        raise ValueError(f"segmentation shape {np.shape(seg)} does not match ground truth {np.shape(gt)}")
    mapping, purity = majority_mapping(seg, gt)
    index = index or SegmentIndex(seg)
    edges = []
    for i, (a, b) in enumerate(pairs):
        a, b = (a, b) if a < b else (b, a)
        ga, gb = mapping.get(a, 0), mapping.get(b, 0)
        if ga == 0 or gb == 0 or purity[a] < purity_threshold or purity[b] < purity_threshold:
            lab = "unk"
        else:
            lab = "pos" if ga == gb else "neg"
        dp = compute_decision_point(seg, a, b, index)
        edges.append(EdgeSample(i, int(a), int(b), dp.point, lab, window_radius))
    return EdgeDataset(edges, split)

