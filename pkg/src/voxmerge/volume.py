"""Dense 3D grids, affinity graphs, windowing and the VOL1 file format.

Volumes are plain numpy arrays indexed ``[x, y, z]``.  Multi-channel data
(affinity graphs, vector fields) put the channel axis first:
``aff[c, x, y, z]`` with ``c = 0, 1, 2`` the edge to the ``+x``, ``+y``,
``+z`` neighbour.  On disk the canonical order is x-fastest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError

MAGIC = "VOL1"
_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


@dataclass(frozen=True)
class SubvolumeSpec:
    """Cubic window of radius ``radius`` around ``center``, block-averaged by ``downsample``."""

    center: tuple[int, int, int]
    radius: int
    downsample: int = 1

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if self.radius % self.downsample:
            raise ValueError(
                f"radius {self.radius} is not a multiple of downsample {self.downsample}"
            )
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def side(self) -> int:
        return 2 * self.radius // self.downsample + 1


def check_volume(vol: np.ndarray) -> np.ndarray:
    vol = np.asarray(vol)
    if vol.ndim != 3 or min(vol.shape) < 1:
        raise ValueError(f"expected a non-empty 3D array, got shape {vol.shape}")
    return vol


def check_affinity(aff: np.ndarray) -> np.ndarray:
    aff = np.asarray(aff)
    if aff.ndim != 4 or aff.shape[0] != 3:
        raise ValueError(f"affinity graph must have shape (3, nx, ny, nz), got {aff.shape}")
    if aff.size and (np.nanmin(aff) < 0.0 or np.nanmax(aff) > 1.0 or np.isnan(aff).any()):
        raise ValueError("affinity values must lie in [0, 1]")
    return aff


def crop_padded(arr: np.ndarray, lo, size, pad_value=0) -> np.ndarray:
    """Copy ``arr[..., lo:lo+size]`` over the last three axes, padding outside the array."""
    lo = np.asarray(lo, dtype=np.int64)
    size = np.broadcast_to(np.asarray(size, dtype=np.int64), (3,))
    shape = np.asarray(arr.shape[-3:])
    out = np.full(arr.shape[:-3] + tuple(int(s) for s in size), pad_value, dtype=arr.dtype)
    src_lo = np.maximum(lo, 0)
    src_hi = np.minimum(lo + size, shape)
    if np.any(src_hi <= src_lo):
        return out
    dst_lo = src_lo - lo
    dst_hi = dst_lo + (src_hi - src_lo)
    src = (Ellipsis,) + tuple(slice(a, b) for a, b in zip(src_lo, src_hi))
    dst = (Ellipsis,) + tuple(slice(a, b) for a, b in zip(dst_lo, dst_hi))
    out[dst] = arr[src]
    return out


def window_origin(spec: SubvolumeSpec) -> np.ndarray:
    """Lowest original-resolution coordinate covered by the window."""
    d = spec.downsample
    return np.asarray(spec.center) - (spec.radius // d) * d - d // 2


def extract_subvolume(vol: np.ndarray, spec: SubvolumeSpec, pad_value=0.0) -> np.ndarray:
    """Return the ``side**3`` window described by ``spec``.

    Output voxel ``i`` (``-r/d <= i <= r/d`` per axis) is the mean of the
    original voxels ``center + i*d - d//2 + k`` for ``k in range(d)``.
    Voxels outside ``vol`` contribute ``pad_value``.  Leading channel axes
    are carried through unchanged.
    """
    if vol.ndim < 3:
        raise ValueError(f"expected at least 3 dimensions, got {vol.ndim}")
    center = np.asarray(spec.center)
    if np.any(center < 0) or np.any(center >= np.asarray(vol.shape[-3:])):
        raise DomainError(f"center {tuple(center)} outside volume of shape {vol.shape[-3:]}")
    d = spec.downsample
    side = spec.side
    block = crop_padded(vol, window_origin(spec), side * d, pad_value)
    if d == 1:
        return block.astype(np.float32, copy=False) if block.dtype.kind == "f" else block
    lead = block.shape[:-3]
    block = block.reshape(lead + (side, d, side, d, side, d)).astype(np.float64)
    n = len(lead)
    out = block.mean(axis=(n + 1, n + 3, n + 5))
    return out.astype(np.float32)


def affinity_to_boundary_map(aff: np.ndarray) -> np.ndarray:
    """Average the three affinity channels into a per-voxel boundary map."""
    aff = check_affinity(aff)
    return aff.astype(np.float64).mean(axis=0).astype(np.float32)


def downsample_mean(vol: np.ndarray, d: int) -> np.ndarray:
    """Block-mean downsampling of the last three axes, dropping incomplete blocks."""
    if d == 1:
        return vol
    shape = np.asarray(vol.shape[-3:]) // d
    lead = vol.shape[:-3]
    v = vol[(Ellipsis,) + tuple(slice(0, s * d) for s in shape)]
    v = v.reshape(lead + (shape[0], d, shape[1], d, shape[2], d)).astype(np.float64)
    n = len(lead)
    return v.mean(axis=(n + 1, n + 3, n + 5))


# -- VOL1 I/O ---------------------------------------------------------------

def save_volume(vol: np.ndarray, path) -> None:
    """Write a 3D volume or a channel-first 4D stack as VOL1."""
    arr = np.asarray(vol)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected 3D or 4D array, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        code = "f32"
    elif arr.dtype.kind in "ui" or arr.dtype == bool:
        if arr.size and arr.min() < 0:
            raise ValueError("negative values cannot be stored as u32")
        code = "u32"
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    c, nx, ny, nz = arr.shape
    header = {"magic": MAGIC, "dims": [nx, ny, nz], "channels": c, "dtype": code}
    payload = np.ascontiguousarray(arr.transpose(0, 3, 2, 1), dtype=_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload.tobytes())


def read_header(raw: bytes, magic: str):
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise FormatError(f"unsupported magic {header.get('magic') if isinstance(header, dict) else header!r}, expected {magic}")
    return header, raw[nl + 1:]


def load_volume(path) -> np.ndarray:
    """Read a VOL1 file; single-channel files come back 3D, others channel-first 4D."""
    raw = Path(path).read_bytes()
    header, payload = read_header(raw, MAGIC)
    try:
        nx, ny, nz = (int(v) for v in header["dims"])
        c = int(header.get("channels", 1))
        dtype = _DTYPES[header["dtype"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header field: {exc}") from None
    if min(nx, ny, nz, c) < 1:
        raise FormatError(f"invalid dims {header['dims']} / channels {c}")
    expected = nx * ny * nz * c * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(c, nz, ny, nx).transpose(0, 3, 2, 1)
    arr = np.ascontiguousarray(arr, dtype=dtype.newbyteorder("="))
    return arr[0] if c == 1 else arr
