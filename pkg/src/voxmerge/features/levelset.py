"""Orientation and gradient-vector-flow fields, and level-set evolution between segments."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .. import _kernels
from ..errors import DomainError
from .boundary import gather

GVF_MU = 0.2
GVF_ITERS = 80
GVF_DT = 0.125
ORIENT_RADIUS = 5
_SIX = ndimage.generate_binary_structure(3, 1)


def local_moment_tensors(mask: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Second central moment matrix of mask voxels in the cube of ``radius`` around every voxel.

    Returns ``(tensors (nx, ny, nz, 3, 3), counts)``.
    """
    m = mask.astype(np.float64)
    size = 2 * radius + 1
    vol = float(size**3)
    box = lambda a: ndimage.uniform_filter(a, size=size, mode="constant", cval=0.0) * vol
    coords = np.indices(mask.shape, dtype=np.float64)
    n = np.rint(box(m))
    s1 = [box(m * c) for c in coords]
    safe = np.maximum(n, 1.0)
    mean = [s / safe for s in s1]
    t = np.zeros(mask.shape + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            v = box(m * coords[i] * coords[j]) / safe - mean[i] * mean[j]
            t[..., i, j] = v
            t[..., j, i] = v
    return t, n


def orientation_field(mask: np.ndarray, radius: int = ORIENT_RADIUS, toward=None) -> tuple[np.ndarray, np.ndarray]:
    """Principal local orientation around ``mask`` and its eigenvalue summary.

    Returns ``(field (3, nx, ny, nz), summary)``; ``summary`` holds the mean
    of the three sorted eigenvalues over mask voxels followed by their
    standard deviations.  Vectors are sign-aligned with the mask's global
    axis (or with ``toward`` when given) and then with their 6-neighbours.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DomainError("orientation field needs a non-empty mask")
    t, n = local_moment_tensors(mask, radius)
    band = n >= 2
    field = np.zeros((3,) + mask.shape)
    evals = np.zeros(mask.shape + (3,))
    if band.any():
        w, v = np.linalg.eigh(t[band])
        evals[band] = w[:, ::-1]
        vec = v[:, :, -1]
        vec[w[:, -1] <= 1e-12] = 0.0
        field[:, band] = vec.T
    ref = np.asarray(toward, dtype=np.float64) if toward is not None else _global_axis(mask)
    if ref is not None and np.linalg.norm(ref) > 0:
        flip = np.einsum("c...,c->...", field, ref) < 0
        field[:, flip] *= -1
        for _ in range(2):
            agree = _neighbour_agreement(field)
            field[:, agree < 0] *= -1
    ev = evals[mask]
    summary = np.concatenate([ev.mean(axis=0), ev.std(axis=0)])
    return field, summary


def _neighbour_agreement(field: np.ndarray) -> np.ndarray:
    """Sum of dot products with the six face neighbours (edge-replicated at the border)."""
    pad = np.pad(field, ((0, 0), (1, 1), (1, 1), (1, 1)), mode="edge")
    core = (slice(None), slice(1, -1), slice(1, -1), slice(1, -1))
    total = np.zeros(field.shape[1:])
    for ax in (1, 2, 3):
        for d in (-1, 1):
            sl = list(core)
            sl[ax] = slice(1 + d, pad.shape[ax] - 1 + d)
            total += np.einsum("c...,c...->...", field, pad[tuple(sl)])
    return total


def _global_axis(mask: np.ndarray):
    p = np.argwhere(mask).astype(np.float64)
    if p.shape[0] < 2:
        return None
    c = p - p.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c)
    return v[:, -1] if w[-1] > 1e-12 else None


def _gradient(f: np.ndarray) -> np.ndarray:
    if min(f.shape) < 2:
        return np.zeros((3,) + f.shape)
    return np.stack(np.gradient(np.asarray(f, dtype=np.float64)))


def gvf_energy(u: np.ndarray, grad_f: np.ndarray, mag2: np.ndarray, mu: float = GVF_MU) -> float:
    """Discrete GVF functional: mu/2 * sum over grid edges |du|^2 + 1/2 * sum |grad f|^2 |u - grad f|^2."""
    smooth = sum(np.sum(np.diff(u, axis=ax) ** 2) for ax in (1, 2, 3))
    fit = np.sum(mag2[None] * (u - grad_f) ** 2)
    return 0.5 * mu * smooth + 0.5 * fit


def gvf_field(bm: np.ndarray, mu: float = GVF_MU, iters: int = GVF_ITERS, dt: float = GVF_DT, trace: bool = False):
    """Gradient vector flow of the boundary map by explicit iteration.

    With ``trace=True`` also returns per-step energies and max-norm residuals.
    """
    grad_f = _gradient(bm)
    mag2 = np.sum(grad_f**2, axis=0)
    u = grad_f.copy()
    energies, residuals = [gvf_energy(u, grad_f, mag2, mu)] if trace else [], []
    for _ in range(iters):
        nxt = _kernels.gvf_step(u, grad_f, mag2, float(mu), float(dt))
        if trace:
            residuals.append(float(np.abs(nxt - u).max()))
            energies.append(gvf_energy(nxt, grad_f, mag2, mu))
        u = nxt
    if trace:
        return u, energies, residuals
    return u


def divergence(u: np.ndarray) -> np.ndarray:
    return sum(np.gradient(u[i], axis=i) for i in range(3))


def curl_magnitude(u: np.ndarray) -> np.ndarray:
    d = [[np.gradient(u[i], axis=j) for j in range(3)] for i in range(3)]
    cx = d[2][1] - d[1][2]
    cy = d[0][2] - d[2][0]
    cz = d[1][0] - d[0][1]
    return np.sqrt(cx**2 + cy**2 + cz**2)


def gvf_features(u: np.ndarray, interface) -> np.ndarray:
    """Mean and std of divergence, then of curl magnitude, over interface voxels."""
    interface = np.asarray(interface).reshape(-1, 3)
    if interface.shape[0] == 0 or min(u.shape[1:]) < 2:
        return np.zeros(4)
    div = gather(divergence(u), interface)
    curl = gather(curl_magnitude(u), interface)
    return np.array([div.mean(), div.std(), curl.mean(), curl.std()])


def signed_distance(mask: np.ndarray) -> np.ndarray:
    """Signed distance, negative inside, with the zero level half a voxel outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    if mask.all():
        return np.full(mask.shape, -np.inf)
    out = ndimage.distance_transform_edt(~mask) - 0.5
    inside = ndimage.distance_transform_edt(mask) - 0.5
    return np.where(mask, -inside, out)


def evolve_level_set(
    seed_mask: np.ndarray,
    v_orient: np.ndarray,
    v_gvf: np.ndarray,
    w_orient: float = 1.0,
    w_gvf: float = 1.0,
    steps: int = 100,
    dt: float = 0.5,
    reinit_every: int = 20,
    erode: bool = True,
) -> np.ndarray:
    """Advect the eroded segment under ``w_orient*v_orient + w_gvf*v_gvf``; return ``{phi <= 0}``.

    The time step is reduced so no voxel moves more than one grid spacing.
    """
    seed = np.asarray(seed_mask, dtype=bool)
    if not seed.any():
        raise DomainError("level set needs a non-empty seed")
    if erode:
        eroded = ndimage.binary_erosion(seed, structure=_SIX)
        if eroded.any():
            seed = eroded
    vel = np.ascontiguousarray(w_orient * np.asarray(v_orient) + w_gvf * np.asarray(v_gvf), dtype=np.float64)
    speed = np.abs(vel).sum(axis=0).max()
    step = dt if speed * dt <= 1.0 else 1.0 / speed
    phi = signed_distance(seed)
    if not np.isfinite(phi).all() or speed == 0.0:
        return seed
    for k in range(1, steps + 1):
        phi = _kernels.advect_step(phi, vel, step)
        if k % reinit_every == 0 and k < steps:
            m = phi <= 0
            if not m.any() or m.all():
                break
            phi = signed_distance(m)
    return phi <= 0


def overlap_features(mask_a, mask_b, evolved_a, evolved_b) -> np.ndarray:
    """``[o_ab, o_ba, mean, min, max, |o_ab - o_ba|]`` of the two evolution overlaps."""
    o_ab = float(np.count_nonzero(evolved_a & mask_b))
    o_ba = float(np.count_nonzero(evolved_b & mask_a))
    return np.array([o_ab, o_ba, (o_ab + o_ba) / 2, min(o_ab, o_ba), max(o_ab, o_ba), abs(o_ab - o_ba)])
