"""Stage orchestration over a working directory: data, resources, cached feature blocks, models, report.

Layout of a working directory::

    synth/       VOL1 volumes, full edge lists and manifest.json
    edges/       the labelled edges each split actually uses (JSONL)
    resources/   codebooks (CODEBOOK1) and dictionaries (DICT1)
    cache/       one FMAT1 file per (split, block, config hash, dataset hash)
    models/      MODEL1 files, one per experiment
    scores/      test-set scores per experiment
    report.json  metrics table; pr/ holds PR curves as CSV
"""
from __future__ import annotations

import hashlib
import logging
import multiprocessing
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentedDataset, apply_isometry
from .config import canonical, digest, mlp_config, synth_config
from .edges import EdgeDataset
from .evaluation import metrics_report, pr_curve, write_json, write_pr_csv
from .features.blocks import BLOCKS, EdgeContext, Resources, VolumeSet, block_length, compute_block
from .features.blocks import shape_context_descriptor_for, sift_descriptors_for
from .fmat import FeatureMatrix
from .learn.dictionary import DictPair, EncoderConfig, extract_patches, omp1_train
from .learn.endtoend import end_to_end_length, end_to_end_vector
from .learn.kmeans import Codebook, kmeans_train
from .model import ArrayRows, load_model, predict, train_boost, train_mlp
from .synthgen import make_benchmark, sha256_file
from .volume import crop_padded, load_volume

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
RESOURCE_FILES = {
    "sc_codebook": "shape_context.codebook",
    "sift_image_codebook": "sift_image.codebook",
    "sift_aff_codebook": "sift_bm.codebook",
    "dicts": "patches.dict",
}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# -- parallel map ----------------------------------------------------------------

_WORKER: dict = {}


def resolve_threads(flag=None) -> int:
    """``VOXMERGE_THREADS`` wins over the flag; at least one."""
    env = os.environ.get("VOXMERGE_THREADS")
    n = int(env) if env else int(flag or 1)
    return max(1, n)


def _call(i):
    return _WORKER["fn"](i)


def ordered_map(fn, n: int, threads: int = 1, chunk: int = 4) -> list:
    """``[fn(0), ..., fn(n-1)]`` computed by ``threads`` forked workers.

    Results come back in index order and every item is computed the same way
    whatever the worker count, so outputs do not depend on ``threads``.
    """
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    _WORKER["fn"] = fn
    try:
        with multiprocessing.get_context("fork").Pool(threads) as pool:
            return pool.map(_call, range(n), chunksize=chunk)
    finally:
        _WORKER.clear()


# -- hashing -----------------------------------------------------------------------

def _sha(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(sha256_file(p).encode())
    return h.hexdigest()[:16]


class Workdir:
    def __init__(self, root, cfg: dict):
        self.root = Path(root)
        self.cfg = cfg

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def volume_files(self, split: str) -> dict:
        return {k: self.root / "synth" / f"{split}_{k}.vol" for k in ("image", "aff", "seg", "gt")}

    def edges_file(self, split: str) -> Path:
        return self.root / "edges" / f"{split}.jsonl"

    def dataset_hash(self, split: str) -> str:
        f = self.volume_files(split)
        return _sha([self.edges_file(split), f["image"], f["aff"], f["seg"]])

    def resource_hashes(self) -> dict:
        out = {}
        for key, name in RESOURCE_FILES.items():
            p = self.root / "resources" / name
            out[key] = sha256_file(p)[:16] if p.exists() else None
        return out


def block_config_hash(name: str, cfg: dict, resource_hashes: dict) -> str:
    """Everything a block's values depend on besides the dataset."""
    block = BLOCKS[name]
    key = {"block": name, "version": __version__, "window": cfg["synth"]["window_radius"]}
    if block.needs or name.startswith("unsup") or name == "e2e":
        learn = cfg["learn"]
        key["learn"] = {k: learn[k] for k in ("K", "alpha", "scales", "fovea", "patch", "pool_radius", "e2e_scales")}
        key["resources"] = {k: resource_hashes.get(k) for k in block.needs}
    return digest(key)


# -- stage: synth / edge selection ------------------------------------------------------

def stage_synth(work: Workdir, seeds=None) -> dict:
    """Generate both volumes (skipped when the manifest already matches the config)."""
    scfg = synth_config(work.cfg)
    if seeds is not None:
        scfg.seeds = tuple(seeds)
    manifest = work.root / "synth" / "manifest.json"
    key = digest(canonical(work.cfg["synth"]) + canonical(list(scfg.seeds)))
    stamp = work.root / "synth" / "config.hash"
    if manifest.exists() and stamp.exists() and stamp.read_text() == key:
        log.info("synth: up to date")
        return {"skipped": True}
    t0 = time.perf_counter()
    train, test = make_benchmark(scfg, work.root / "synth")
    stamp.write_text(key)
    log.info("synth: generated in %.1fs (train %s, test %s)", time.perf_counter() - t0,
             train.edges.counts, test.edges.counts)
    return {"train": train.edges.counts, "test": test.edges.counts}


def select_edges(ds: EdgeDataset, max_edges, seed: int) -> EdgeDataset:
    """Labelled edges only, then a seeded subset of at most ``max_edges`` kept in id order."""
    lab = ds.labeled()
    if max_edges is None or len(lab) <= max_edges:
        return lab
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(lab), size=int(max_edges), replace=False))
    return EdgeDataset([lab[int(i)] for i in keep], ds.split, dict(ds.meta))


def stage_select(work: Workdir) -> dict:
    ecfg = work.cfg["edges"]
    out = {}
    for k, split in enumerate(SPLITS):
        full = EdgeDataset.load(work.root / "synth" / f"{split}_edges.jsonl", split,
                                window_radius=work.cfg["synth"]["window_radius"])
        sel = select_edges(full, ecfg["max_edges"].get(split), int(ecfg["sample_seed"]) + k)
        path = work.path("edges", f"{split}.jsonl")
        tmp = path.with_suffix(".tmp")
        sel.save(tmp)
        if path.exists() and path.read_bytes() == tmp.read_bytes():
            tmp.unlink()
        else:
            tmp.replace(path)
        out[split] = sel.counts
    return out


def load_split(work: Workdir, split: str) -> tuple[VolumeSet, EdgeDataset]:
    f = work.volume_files(split)
    vols = VolumeSet(load_volume(f["image"]), load_volume(f["aff"]), load_volume(f["seg"]).astype(np.int64))
    ds = EdgeDataset.load(work.edges_file(split), split, window_radius=work.cfg["synth"]["window_radius"])
    return vols, ds


# -- stage: resource learning ---------------------------------------------------------

def encoder_config(cfg: dict) -> EncoderConfig:
    l = cfg["learn"]
    return EncoderConfig(K=int(l["K"]), alpha=float(l["alpha"]), scales=tuple(l["scales"]), fovea=int(l["fovea"]),
                         patch=int(l["patch"]))


def _subset(n: int, k: int, seed: int) -> np.ndarray:
    if n <= k:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))


def learn_codebooks(vols: VolumeSet, ds: EdgeDataset, cfg: dict, threads: int = 1) -> dict:
    """Shape-context and SIFT codebooks from descriptors of training edges."""
    l = cfg["learn"]
    pick = _subset(len(ds), int(l["codebook_edges"]), int(l["seed"]))

    def descs(i):
        ctx = EdgeContext(vols, ds[int(pick[i])])
        di, db = sift_descriptors_for(ctx)
        return shape_context_descriptor_for(ctx), di, db

    out = ordered_map(descs, len(pick), threads)
    sc = np.array([o[0] for o in out])
    si = np.concatenate([o[1] for o in out])
    sb = np.concatenate([o[2] for o in out])
    seed, iters = int(l["seed"]), int(l["kmeans_iters"])
    return {
        "sc_codebook": kmeans_train(sc, int(l["sc_k"]), seed, iters),
        "sift_image_codebook": kmeans_train(si, int(l["sift_k"]), seed + 1, iters),
        "sift_aff_codebook": kmeans_train(sb, int(l["sift_k"]), seed + 2, iters),
    }


def training_patches(vols: VolumeSet, ds: EdgeDataset, cfg: dict, scale: int, threads: int = 1) -> np.ndarray:
    """Normalised patches around training decision points (image, boundary map, union mask)."""
    l = cfg["learn"]
    enc = encoder_config(cfg)
    res = Resources(encoder=enc, pool_radius=int(l["pool_radius"]))
    pick = _subset(len(ds), int(l["dict_edges"]), int(l["seed"]) + 10)
    per = int(l["patches_per_edge"])
    half = scale * (enc.patch // 2 + 4)

    def patches(i):
        ctx = EdgeContext(vols, ds[int(pick[i])])
        win, _, _, c = ctx.unsup_window(res)
        sub = win.data[:, c[0] - half:c[0] + half + 1, c[1] - half:c[1] + half + 1, c[2] - half:c[2] + half + 1]
        p = extract_patches(sub, scale, enc.patch)
        rng = np.random.default_rng([int(l["seed"]), scale, int(pick[i])])
        return p[np.sort(rng.choice(p.shape[0], size=min(per, p.shape[0]), replace=False))]

    return np.concatenate(ordered_map(patches, len(pick), threads))


def learn_dictionaries(vols: VolumeSet, ds: EdgeDataset, cfg: dict, threads: int = 1) -> DictPair:
    l = cfg["learn"]
    out = {}
    for s in l["scales"]:
        x = training_patches(vols, ds, cfg, int(s), threads)
        out[int(s)] = omp1_train(x, int(l["K"]), int(l["seed"]) + int(s), int(l["dict_iters"]))
    return DictPair(out, float(l["alpha"]), int(l["seed"]))


def stage_resources(work: Workdir, threads: int = 1, which=("codebooks", "dicts")) -> dict:
    """Learn whatever resources are missing or stale for the current training set and config."""
    vols, ds = load_split(work, "train")
    key = digest({"data": work.dataset_hash("train"), "learn": work.cfg["learn"], "version": __version__})
    stamp = work.root / "resources" / "inputs.hash"
    fresh = stamp.exists() and stamp.read_text() == key
    done = {}
    rdir = work.root / "resources"
    if "codebooks" in which:
        names = [k for k in RESOURCE_FILES if k != "dicts"]
        if not (fresh and all((rdir / RESOURCE_FILES[k]).exists() for k in names)):
            for k, cb in learn_codebooks(vols, ds, work.cfg, threads).items():
                cb.save(work.path("resources", RESOURCE_FILES[k]))
            done["codebooks"] = "learned"
        else:
            done["codebooks"] = "cached"
    if "dicts" in which:
        if not (fresh and (rdir / RESOURCE_FILES["dicts"]).exists()):
            learn_dictionaries(vols, ds, work.cfg, threads).save(work.path("resources", RESOURCE_FILES["dicts"]))
            done["dicts"] = "learned"
        else:
            done["dicts"] = "cached"
    # the stamp only certifies what exists now, so a partial run never masks a stale resource
    if all(p.exists() for p in (rdir / f for f in RESOURCE_FILES.values())):
        stamp.write_text(key)
    elif not fresh and stamp.exists():
        stamp.unlink()
    return done


def load_resources(work: Workdir) -> Resources:
    l = work.cfg["learn"]
    res = Resources(encoder=encoder_config(work.cfg), pool_radius=int(l["pool_radius"]),
                    e2e_scales=tuple(tuple(int(v) for v in s) for s in l["e2e_scales"]))
    rdir = work.root / "resources"
    for key, name in RESOURCE_FILES.items():
        p = rdir / name
        if p.exists():
            setattr(res, key, DictPair.load(p) if key == "dicts" else Codebook.load(p))
    return res


# -- stage: features --------------------------------------------------------------------

def cache_path(work: Workdir, split: str, block: str, chash: str, dhash: str) -> Path:
    return work.path("cache", split, f"{block}-{chash}-{dhash}.fmat")


def compute_rows(vols: VolumeSet, ds: EdgeDataset, names, res: Resources, threads: int = 1) -> np.ndarray:
    """Feature rows (float32) for ``names`` over every edge, in dataset order."""
    names = list(names)
    width = sum(block_length(n, res) for n in names)

    def row(i):
        ctx = EdgeContext(vols, ds[i])
        return np.concatenate([compute_block(n, ctx, res) for n in names]).astype(np.float32)

    rows = ordered_map(row, len(ds), threads)
    return np.array(rows, dtype=np.float32).reshape(len(ds), width)


def stage_features(work: Workdir, split: str, names, threads: int = 1) -> FeatureMatrix:
    """Feature matrix for ``names``, computing only blocks without a valid cache entry."""
    names = list(dict.fromkeys(names))
    unknown = [n for n in names if n not in BLOCKS]
    if unknown:
        raise StageError("features", f"unknown feature blocks {unknown}")
    dhash = work.dataset_hash(split)
    rh = work.resource_hashes()
    hashes = {n: block_config_hash(n, work.cfg, rh) for n in names}
    mats, missing = {}, []
    for n in names:
        p = cache_path(work, split, n, hashes[n], dhash)
        if p.exists():
            log.info("cache hit: %s/%s", split, n)
            mats[n] = FeatureMatrix.load(p)
        else:
            missing.append(n)
    if missing:
        res = load_resources(work)
        for n in missing:
            for need in BLOCKS[n].needs:
                v = getattr(res, need)
                if v is None:
                    raise StageError("features", f"block {n} needs {need}; run codebook-learn/dict-learn first")
        vols, ds = load_split(work, split)
        t0 = time.perf_counter()
        log.info("computing %s/%s over %d edges", split, ",".join(missing), len(ds))
        vals = compute_rows(vols, ds, missing, res, threads)
        log.info("computed in %.1fs", time.perf_counter() - t0)
        pos = 0
        for n in missing:
            k = block_length(n, res)
            fm = FeatureMatrix(vals[:, pos:pos + k], [(n, k)], dhash, hashes[n])
            fm.save(cache_path(work, split, n, hashes[n], dhash))
            mats[n] = fm
            pos += k
    out = FeatureMatrix(np.hstack([mats[n].values for n in names]), [mats[n].blocks[0] for n in names], dhash,
                        digest([hashes[n] for n in names]))
    return out


# -- end-to-end rows under augmentation ---------------------------------------------------

class EndToEndRows:
    """End-to-end vectors of an augmented training set, produced on demand.

    Per base edge a small cube of image, boundary map and labels is kept;
    each requested row crops it at the (jittered) centre, applies the
    isometry and builds the vector with the row's (possibly swapped) masks.
    Rows equal the ``e2e`` block evaluated on the corresponding augmented
    edge.
    """

    def __init__(self, vols: VolumeSet, ds: EdgeDataset, kinds=(), scales=((5, 1),)):
        self.aug = AugmentedDataset(ds, kinds, vols.shape)
        self.scales = tuple(tuple(int(v) for v in s) for s in scales)
        self.reach = max(r + d for r, d in self.scales)
        side = 2 * (self.reach + 1) + 1
        self.image_mean = vols.image_mean
        self.cubes = []
        for e in ds:
            lo = np.asarray(e.dp) - self.reach - 1
            self.cubes.append((
                crop_padded(vols.image, lo, side, vols.image_mean),
                crop_padded(vols.bm, lo, side, 0.0),
                crop_padded(np.asarray(vols.seg), lo, side, 0),
            ))
        self.y = np.repeat(ds.y, self.aug.multiplicity)
        self.dims = end_to_end_length(self.scales)

    def __len__(self):
        return len(self.aug)

    def row(self, i: int) -> np.ndarray:
        e = self.aug[int(i)]
        img, bm, lab = self.cubes[int(i) // self.aug.multiplicity]
        j = np.asarray(e.jitter) + 1
        s = 2 * self.reach + 1
        sl = tuple(slice(int(a), int(a) + s) for a in j)
        img, bm, lab = (apply_isometry(v[sl], e.isometry) for v in (img, bm, lab))
        c = (self.reach,) * 3
        return end_to_end_vector(img, bm, lab == e.a, lab == e.b, c, self.scales, image_pad=self.image_mean)

    def rows(self, idx) -> np.ndarray:
        return np.array([self.row(i) for i in np.atleast_1d(idx)], dtype=np.float32)


# -- stage: training and evaluation ----------------------------------------------------------

def train_model(X, y, kind: str, cfg: dict):
    if kind in ("mlp", "mlp2"):
        return train_mlp(X, y, mlp_config(cfg, kind))
    if kind == "boost":
        return train_boost(np.asarray(X), y, int(cfg["model"]["boost"]["rounds"]))
    raise StageError("train", f"unknown model kind {kind!r}")


def experiment_key(work: Workdir, name: str) -> str:
    exp = work.cfg["experiments"][name]
    rh = work.resource_hashes()
    blocks = work.cfg["sets"][exp["set"]]
    return digest({
        "blocks": {b: block_config_hash(b, work.cfg, rh) for b in blocks},
        "data": work.dataset_hash("train"), "exp": exp, "model": work.cfg["model"].get(exp["model"]),
    })


def stage_experiment(work: Workdir, name: str, threads: int = 1) -> dict:
    """Train one experiment's classifier and score the test split."""
    cfg = work.cfg
    exp = cfg["experiments"][name]
    blocks = cfg["sets"][exp["set"]]
    test = stage_features(work, "test", blocks, threads)
    _, test_ds = load_split(work, "test")
    key = experiment_key(work, name)
    mpath = work.path("models", f"{name}.model")
    kpath = work.path("models", f"{name}.key")
    aug = list(exp.get("augment") or [])
    if mpath.exists() and kpath.exists() and kpath.read_text() == key:
        log.info("model %s: up to date", name)
        model = load_model(mpath)
    else:
        vols, train_ds = load_split(work, "train")
        if aug:
            if blocks != ["e2e"]:
                raise StageError("train", "training-set augmentation is implemented for the e2e set only")
            src = EndToEndRows(vols, train_ds, aug, load_resources(work).e2e_scales)
            log.info("model %s: %d augmented training rows", name, len(src))
            model = train_model(src, None, exp["model"], cfg)
        else:
            train = stage_features(work, "train", blocks, threads)
            model = train_model(train.values, train_ds.y, exp["model"], cfg)
        model.meta = {"blocks": [[n, k] for n, k in test.blocks], "config_hash": test.config_hash,
                      "train_dataset_hash": work.dataset_hash("train"), "augment": aug}
        model.save(mpath)
        kpath.write_text(key)
        model = load_model(mpath)
    scores = predict(model, test.values)
    np.savetxt(work.path("scores", f"{name}.txt"), scores, fmt="%.9g")
    rep = metrics_report(scores, test_ds.y)
    write_pr_csv(pr_curve(scores, test_ds.y), work.path("pr", f"{name}.csv"))
    rep.update({"dim": int(test.values.shape[1]), "set": exp["set"], "model": exp["model"],
                "augment": aug})
    log.info("%s: test ACC %.2f AUC %.2f (dim %d)", name, rep["acc"], 100 * rep["auc"], rep["dim"])
    return rep


def run_pipeline(work: Workdir, threads: int = 1, experiments=None) -> dict:
    """Every stage in order; returns the report that is also written to ``report.json``."""
    t0 = time.perf_counter()
    stage = "synth"
    try:
        stage_synth(work)
        stage = "edges"
        counts = stage_select(work)
        stage = "resources"
        stage_resources(work, threads)
        rows, timings = {}, {}
        for name in experiments or list(work.cfg["experiments"]):
            stage = f"experiment {name}"
            t1 = time.perf_counter()
            rows[name] = stage_experiment(work, name, threads)
            timings[name] = round(time.perf_counter() - t1, 2)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    report = {"edges": counts, "experiments": rows}
    write_json(report, work.path("report.json"))
    # wall-clock times live apart from the report so every other artifact is reproducible byte for byte
    timings["total"] = round(time.perf_counter() - t0, 1)
    write_json(timings, work.path("timings.json"))
    work.path("report.md").write_text(format_report(report))
    return report


def format_report(report: dict) -> str:
    lines = ["| experiment | feature set | model | augment | test ACC (%) | test AUC (%) | dim |",
             "|---|---|---|---|---|---|---|"]
    for name, r in report["experiments"].items():
        lines.append(f"| {name} | {r['set']} | {r['model']} | {'+'.join(r['augment']) or '-'} | "
                     f"{r['acc']:.2f} | {100 * r['auc']:.2f} | {r['dim']} |")
    return "\n".join(lines) + "\n"
