"""Training-set augmentation: segment swap, square-prism isometries, decision-point jitter."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .edges import EdgeDataset, EdgeSample

AUG_KINDS = ("swap", "isometry", "jitter")
MULTIPLICITY = {"swap": 2, "isometry": 16, "jitter": 27}
JITTER_OFFSETS = tuple(itertools.product((-1, 0, 1), repeat=3))


@dataclass(frozen=True)
class Isometry:
    """``x -> R_z^r F x`` about the window centre, ``F = diag(+-1, 1, +-1)``."""

    r: int = 0
    flip_x: bool = False
    flip_z: bool = False

    @property
    def matrix(self) -> np.ndarray:
        f = np.diag([-1 if self.flip_x else 1, 1, -1 if self.flip_z else 1])
        rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]])
        return np.linalg.matrix_power(rot, self.r) @ f

    @property
    def index(self) -> int:
        return isometry_group().index(self)

    def compose(self, other: "Isometry") -> "Isometry":
        """``self ∘ other`` (apply ``other`` first)."""
        return from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "Isometry":
        return from_matrix(self.matrix.T)


@lru_cache(maxsize=1)
def _group() -> tuple:
    return tuple(Isometry(r, fx, fz) for r in range(4) for fx in (False, True) for fz in (False, True))


def isometry_group() -> list[Isometry]:
    """All 16 elements in lexicographic ``(r, flip_x, flip_z)`` order; element 0 is the identity."""
    return list(_group())


def from_matrix(m: np.ndarray) -> Isometry:
    for g in _group():
        if np.array_equal(g.matrix, m):
            return g
    raise ValueError("matrix is not a square-prism isometry")


def _as_isometry(g) -> Isometry:
    return _group()[g] if isinstance(g, (int, np.integer)) else g


def apply_isometry(vol: np.ndarray, g) -> np.ndarray:
    """Remap the last three axes so that voxel ``p`` moves to ``g(p)`` about the centre."""
    g = _as_isometry(g)
    if g.r % 2 and vol.shape[-3] != vol.shape[-2]:
        raise ValueError(f"odd rotation needs equal x and y extents, got {vol.shape[-3:]}")
    out = vol
    if g.flip_x:
        out = np.flip(out, axis=-3)
    if g.flip_z:
        out = np.flip(out, axis=-1)
    if g.r:
        out = np.rot90(out, g.r, axes=(-3, -2))
    return np.ascontiguousarray(out)


def apply_isometry_field(field: np.ndarray, g) -> np.ndarray:
    """Transform a (3, ...) vector field: positions are remapped and vectors rotated."""
    g = _as_isometry(g)
    moved = apply_isometry(field, g)
    return np.ascontiguousarray(np.tensordot(g.matrix.astype(field.dtype), moved, axes=(1, 0)))


def apply_isometry_affinity(aff: np.ndarray, g) -> np.ndarray:
    """Transform a (3, ...) affinity graph.

    Channel ``c`` at ``p`` is the edge ``p -- p + e_c``.  Under ``g`` that
    edge becomes ``g(p) -- g(p) + M e_c``; when ``M e_c = -e_k`` it is stored
    at ``g(p) - e_k`` in channel ``k``, so the channel is rolled by one voxel.
    The border slice carrying edges that leave the array wraps around, which
    keeps the map exactly invertible.
    """
    g = _as_isometry(g)
    moved = apply_isometry(aff, g)
    m = g.matrix
    out = np.empty_like(moved)
    for c in range(3):
        k = int(np.flatnonzero(m[:, c])[0])
        ch = moved[c]
        out[k] = np.roll(ch, -1, axis=k) if m[k, c] < 0 else ch
    return out


def jitter_points(dp, shape=None) -> list[tuple[int, int, int]]:
    """The 27 points ``dp + {-1,0,1}^3`` in lexicographic offset order, clamped to ``shape``."""
    p = np.asarray(dp, dtype=np.int64)
    pts = p + np.array(JITTER_OFFSETS)
    if shape is not None:
        pts = np.clip(pts, 0, np.asarray(shape[-3:]) - 1)
    return [tuple(int(v) for v in q) for q in pts]


def swap_edge(sample: EdgeSample) -> EdgeSample:
    return replace(sample, a=sample.b, b=sample.a)


def _check_kinds(kinds) -> tuple:
    kinds = tuple(kinds or ())
    bad = [k for k in kinds if k not in AUG_KINDS]
    if bad:
        raise ValueError(f"unknown augmentation kinds {bad}; expected a subset of {AUG_KINDS}")
    # canonical order so the enumeration does not depend on how kinds were listed
    return tuple(k for k in AUG_KINDS if k in kinds)


class AugmentedDataset:
    """Lazy cartesian product of a base dataset with the selected augmentations.

    Item ``i`` is base edge ``i // m`` under augmentation ``i % m`` where
    ``m`` is the product of the multiplicities; within that, swap varies
    slowest and jitter fastest.  Items get id ``base_id * m + (i % m)``.
    """

    def __init__(self, base: EdgeDataset, kinds=(), shape=None):
        self.base = base
        self.kinds = _check_kinds(kinds)
        self.shape = shape
        self.multiplicity = int(np.prod([MULTIPLICITY[k] for k in self.kinds])) if self.kinds else 1

    def __len__(self) -> int:
        return len(self.base) * self.multiplicity

    def _decode(self, k: int) -> dict:
        out = {}
        for kind in reversed(self.kinds):
            out[kind] = k % MULTIPLICITY[kind]
            k //= MULTIPLICITY[kind]
        return out

    def __getitem__(self, i: int) -> EdgeSample:
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        e = self.base[i // self.multiplicity]
        k = i % self.multiplicity
        aug = self._decode(k)
        if aug.get("swap"):
            e = swap_edge(e)
        if "isometry" in aug:
            e = replace(e, isometry=aug["isometry"])
        if "jitter" in aug:
            jit = np.array(JITTER_OFFSETS[aug["jitter"]])
            if self.shape is not None:
                jit = np.clip(np.asarray(e.dp) + jit, 0, np.asarray(self.shape) - 1) - np.asarray(e.dp)
            e = replace(e, jitter=tuple(int(v) for v in jit))
        return replace(e, id=e.id * self.multiplicity + k)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def shard(self, index: int, count: int):
        """Items ``index, index + count, ...``; shards partition the dataset."""
        if not 0 <= index < count:
            raise ValueError(f"shard index {index} out of range for {count} shards")
        for i in range(index, len(self), count):
            yield self[i]

    def materialize(self) -> EdgeDataset:
        return EdgeDataset(list(self), self.base.split, dict(self.base.meta, augment=list(self.kinds)))


def augment_dataset(ds: EdgeDataset, kinds=(), shape=None, materialize: bool = False):
    """Augmented view of ``ds``; pass ``materialize=True`` to get a plain dataset."""
    aug = AugmentedDataset(ds, kinds, shape)
    return aug.materialize() if materialize else aug
