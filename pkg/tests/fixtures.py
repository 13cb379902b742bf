"""Small synthetic volumes with labelled edges, shared by block and pipeline tests."""
import numpy as np

from voxmerge.edges import EdgeSample, compute_decision_point, find_adjacent_pairs
from voxmerge.features.blocks import VolumeSet
from voxmerge.synthgen import binary_affinity


def tube_scene(seed=0, n=32):
    """Two bent tubes, each cut into two supervoxels, plus noise."""
    rng = np.random.default_rng(seed)
    x, y, z = np.indices((n, n, n))
    gt = np.zeros((n, n, n), np.int32)
    gt[(y - 10) ** 2 + (z - 12) ** 2 <= 16 + 4 * np.sin(x / 5.0)] = 1
    gt[((y - 20) ** 2 + (z - 18) ** 2 <= 12) & (gt == 0)] = 2
    seg = gt.copy()
    seg[(gt == 1) & (x >= n // 2 + int(rng.integers(-3, 4)))] = 3
    seg[(gt == 2) & (x >= n // 2 + int(rng.integers(-3, 4)))] = 4
    aff = binary_affinity(gt).astype(np.float64)
    # continuous values without exact ties, so watershed order does not depend on voxel index
    aff = (0.8 * aff + 0.1 + rng.uniform(0, 0.05, aff.shape)).astype(np.float32)
    image = (0.5 + 0.3 * (gt > 0) + rng.normal(0, 0.05, gt.shape)).astype(np.float32)
    vols = VolumeSet(image, aff, seg)
    edges = []
    for i, (a, b) in enumerate(find_adjacent_pairs(seg)):
        dp = compute_decision_point(seg, a, b).point
        edges.append(EdgeSample(i, a, b, dp, "pos" if gt[seg == a][0] == gt[seg == b][0] else "neg", 8))
    return vols, edges


# a whole-pipeline configuration small enough for the unit suite (about a minute end to end)
TINY_CONFIG = {
    "synth": {"dims": [48, 48, 48], "n_tubes": 6, "radius_range": [2.5, 4.5], "length_range": [25.0, 45.0],
              "fill": 4, "min_volume": 200, "seeds": [5, 6]},
    "edges": {"max_edges": {"train": 60, "test": 60}},
    "learn": {"K": 8, "dict_edges": 20, "patches_per_edge": 20, "codebook_edges": 30, "sc_k": 5, "sift_k": 8,
              "kmeans_iters": 20, "dict_iters": 5, "pool_radius": 6, "e2e_scales": [[3, 1]]},
    "model": {"mlp": {"hidden": [16], "updates": 300}, "boost": {"rounds": 5}},
    "experiments": {"e2e-aug": {"set": "e2e", "model": "mlp", "augment": ["swap", "jitter"]}},
}
