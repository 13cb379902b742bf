"""Pipeline configuration: one JSON document with a section per stage."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path

from .features.blocks import HAND_BLOCKS
from .model import MLPConfig
from .synthgen import SynthConfig

UNSUP_DYN = ("unsup-dyn-obj", "unsup-dyn-bnd")
ALL_AUG = ["swap", "isometry", "jitter"]

DEFAULTS = {
    "synth": asdict(SynthConfig()),
    "edges": {
        # labelled edges kept per split (null keeps all); configs/desk.json subsamples for the time budget
        "max_edges": {"train": None, "test": None},
        "sample_seed": 11,
    },
    "learn": {
        "K": 1000,
        "alpha": 0.25,
        "scales": [1, 2],
        "fovea": 2,
        "patch": 5,
        "dict_iters": 10,
        "dict_edges": 200,
        "patches_per_edge": 50,
        "codebook_edges": 300,
        "sc_k": 20,
        "sift_k": 50,
        "kmeans_iters": 100,
        "pool_radius": 10,
        "e2e_scales": [[5, 1]],
        "seed": 3,
    },
    "model": {
        "mlp": {"hidden": [200], "dropout": 0.5, "updates": 500000, "lr": 0.01, "momentum": 0.9,
                "decay_at": [0.6, 0.85], "batch": 32, "seed": 0, "clip": 1.0},
        "mlp2": {"hidden": [200, 200], "dropout": 0.5, "updates": 500000, "lr": 0.01, "momentum": 0.9,
                 "decay_at": [0.6, 0.85], "batch": 32, "seed": 0, "clip": 1.0},
        "boost": {"rounds": 200},
    },
    "sets": {
        "baseline": ["boundary"],
        "all-hand": list(HAND_BLOCKS),
        "unsup-mid": ["unsup-midpoint"],
        "unsup-static": ["unsup-midpoint", "unsup-all"],
        "unsup-dyn": list(UNSUP_DYN),
        "e2e": ["e2e"],
        "hand+unsup": list(HAND_BLOCKS) + list(UNSUP_DYN),
    },
    # report rows: feature set, classifier and training-set augmentation
    "experiments": {
        "baseline": {"set": "baseline", "model": "mlp", "augment": []},
        "all-hand": {"set": "all-hand", "model": "mlp", "augment": []},
        "unsup-mid": {"set": "unsup-mid", "model": "mlp", "augment": []},
        "unsup-dyn": {"set": "unsup-dyn", "model": "mlp", "augment": []},
        "e2e": {"set": "e2e", "model": "mlp", "augment": []},
        "e2e-aug": {"set": "e2e", "model": "mlp", "augment": ALL_AUG},
        "combined": {"set": "hand+unsup", "model": "mlp", "augment": []},
    },
    "threads": 1,
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


# sections whose keys are user-chosen names; entries of the first two are replaced whole
OPEN_SECTIONS = ("sets.", "experiments.", "model.")


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base and path not in OPEN_SECTIONS:
            raise KeyError(f"unknown config key {path + k!r}")
        if isinstance(v, dict) and isinstance(base.get(k), dict) and path not in OPEN_SECTIONS[:2]:
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with the JSON file at ``path`` (unknown keys are rejected)."""
    cfg = default_config()
    if path is not None:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    for name, exp in cfg["experiments"].items():
        if exp["set"] not in cfg["sets"]:
            raise KeyError(f"experiment {name!r} uses unknown feature set {exp['set']!r}")
    return cfg


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    """Short stable hash of any JSON-serialisable value."""
    return hashlib.sha256(canonical(obj).encode("utf-8")).hexdigest()[:16]


def synth_config(cfg: dict) -> SynthConfig:
    names = {f.name for f in fields(SynthConfig)}
    s = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg["synth"].items() if k in names}
    return SynthConfig(**s)


def mlp_config(cfg: dict, kind: str) -> MLPConfig:
    m = dict(cfg["model"][kind])
    return MLPConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in m.items()})
