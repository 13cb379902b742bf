"""OMP-1 dictionary learning on normalised 5^3 multi-channel patches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StateError
from ..volume import downsample_mean
from ._io import expect_size, read_blob, write_blob

MAGIC = "DICT1"
CONTRAST_EPS = 1e-4


@dataclass(frozen=True)
class EncoderConfig:
    K: int = 1000
    alpha: float = 0.25
    scales: tuple = (1, 2)
    fovea: int = 2
    patch: int = 5

    @property
    def code_length(self) -> int:
        return len(self.scales) * 2 * 2 * self.K


@dataclass
class Dictionary:
    atoms: np.ndarray | None = None  # (K, P), unit rows
    seed: int = 0
    objective: list = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.atoms is not None

    @property
    def K(self) -> int:
        return 0 if self.atoms is None else self.atoms.shape[0]


@dataclass
class DictPair:
    """One dictionary per encoding scale."""

    scales: dict  # scale -> Dictionary
    alpha: float = 0.25
    seed: int = 0

    def __getitem__(self, scale: int) -> Dictionary:
        return self.scales[scale]

    @property
    def K(self) -> int:
        return next(iter(self.scales.values())).K

    def check(self) -> None:
        if not self.scales or any(not d.trained for d in self.scales.values()):
            raise StateError("dictionary has not been trained")

    def save(self, path) -> None:
        self.check()
        ss = sorted(self.scales)
        k, p = self.scales[ss[0]].atoms.shape
        header = {"magic": MAGIC, "K": k, "dims": p, "alpha": self.alpha, "seed": self.seed, "scales": ss}
        write_blob(path, header, [self.scales[s].atoms for s in ss])

    @classmethod
    def load(cls, path) -> "DictPair":
        header, values = read_blob(path, MAGIC)
        k, p = int(header["K"]), int(header["dims"])
        ss = [int(s) for s in header.get("scales", [1, 2])]
        expect_size(values, len(ss) * k * p, "dictionary payload")
        atoms = values.reshape(len(ss), k, p).astype(np.float64)
        return cls({s: Dictionary(atoms[i], int(header.get("seed", 0))) for i, s in enumerate(ss)},
                   float(header.get("alpha", 0.25)), int(header.get("seed", 0)))


def normalize_patches(x: np.ndarray) -> np.ndarray:
    """Per-row mean subtraction and division by (std + 1e-4)."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean(axis=1, keepdims=True)
    return x / (x.std(axis=1, keepdims=True) + CONTRAST_EPS)


def patch_grid(channels: np.ndarray, patch: int = 5) -> np.ndarray:
    """All valid ``patch^3`` windows of a (C, nx, ny, nz) stack as (mx, my, mz, C*patch^3)."""
    c = channels.shape[0]
    if min(channels.shape[1:]) < patch:
        raise ValueError(f"window {channels.shape[1:]} smaller than patch side {patch}")
    view = sliding_window_view(channels, (patch, patch, patch), axis=(1, 2, 3))
    m = view.shape[1:4]
    return view.transpose(1, 2, 3, 0, 4, 5, 6).reshape(m + (c * patch**3,))


def extract_patches(window_channels: np.ndarray, scale: int = 1, patch: int = 5) -> np.ndarray:
    """Normalised patches centred at every valid voxel of the (downsampled) window."""
    ch = downsample_mean(np.asarray(window_channels, dtype=np.float64), scale)
    g = patch_grid(ch, patch)
    return normalize_patches(g.reshape(-1, g.shape[-1]))


def omp1_objective(x: np.ndarray, atoms: np.ndarray) -> float:
    proj = x @ atoms.T
    best = np.abs(proj).max(axis=1)
    return float((x * x).sum() - (best**2).sum())


def omp1_train(patches, K: int, seed: int = 0, iters: int = 10) -> Dictionary:
    """Alternate single-atom assignment and atom re-estimation.

    Each patch takes the atom with the largest ``|d^T x|``; each atom
    becomes the normalised coefficient-weighted sum of its patches.  Atoms
    left without patches are re-drawn from random patches.
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"patches must be 2D, got shape {x.shape}")
    if K < 1 or K > x.shape[0]:
        raise ValueError(f"need at least K={K} patches, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((K, x.shape[1]))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    trace = []
    for _ in range(iters):
        proj = x @ d.T
        j = np.abs(proj).argmax(axis=1)
        s = proj[np.arange(x.shape[0]), j]
        trace.append(float((x * x).sum() - (s**2).sum()))
        new = np.zeros_like(d)
        np.add.at(new, j, s[:, None] * x)
        norm = np.linalg.norm(new, axis=1)
        live = norm > 1e-12
        new[live] /= norm[live, None]
        dead = np.flatnonzero(~live)
        if dead.size:
            pick = x[rng.choice(x.shape[0], size=dead.size, replace=dead.size > x.shape[0])]
            pn = np.linalg.norm(pick, axis=1, keepdims=True)
            repl = rng.standard_normal(pick.shape)
            repl /= np.linalg.norm(repl, axis=1, keepdims=True)
            new[dead] = np.where(pn > 1e-12, pick / np.maximum(pn, 1e-12), repl)
        d = new
    trace.append(omp1_objective(x, d))
    return Dictionary(d, seed, trace)


def soft_threshold_codes(x: np.ndarray, atoms: np.ndarray, alpha: float) -> np.ndarray:
    """``[max(0, D^T x - alpha), max(0, -D^T x - alpha)]`` per row."""
    proj = x @ atoms.T
    return np.concatenate([np.maximum(0.0, proj - alpha), np.maximum(0.0, -proj - alpha)], axis=-1)
