"""Flattened raw-voxel vectors (image, boundary map, two masks) around a decision point."""
from __future__ import annotations

import numpy as np

from ..volume import SubvolumeSpec, extract_subvolume


def end_to_end_length(scales) -> int:
    return sum(4 * (2 * r // d + 1) ** 3 for r, d in scales)


def end_to_end_vector(image, bm, mask_a, mask_b, center, scales=((5, 1),), image_pad: float | None = None) -> np.ndarray:
    """Concatenate the four channel windows for each ``(radius, downsample)`` scale.

    Channel order within a scale is image, boundary map, mask a, mask b;
    each window is flattened in x-fastest order.  Image voxels outside the
    volume take ``image_pad`` (the image mean by default), the rest 0.
    """
    image = np.asarray(image)
    if not (image.shape == np.shape(bm) == np.shape(mask_a) == np.shape(mask_b)):
        raise ValueError("all four channels must share dimensions")
    pad = float(image.mean()) if image_pad is None else float(image_pad)
    out = []
    for r, d in scales:
        spec = SubvolumeSpec(tuple(center), int(r), int(d))
        for vol, p in ((image, pad), (bm, 0.0), (mask_a, 0.0), (mask_b, 0.0)):
            w = extract_subvolume(np.asarray(vol, dtype=np.float32), spec, p)
            out.append(w.ravel(order="F"))
    return np.concatenate(out).astype(np.float32)
