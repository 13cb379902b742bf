"""Command line entry point: ``voxmerge <subcommand> ...``.

Most subcommands work on a working directory (``--work``) whose layout is
described in :mod:`voxmerge.pipeline`; ``overseg``, ``augment``, ``train``,
``eval`` and ``pr`` also accept plain files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import augment_dataset
from .config import load_config
from .edges import EdgeDataset, SegmentIndex, find_adjacent_pairs, label_edges
from .errors import VoxmergeError
from .evaluation import cost_benchmark, metrics_report, pr_curve, write_json, write_pr_csv
from .features.blocks import BLOCKS, EdgeContext, compute_block
from .fmat import FeatureMatrix
from .model import load_model, predict
from .pipeline import (
    SPLITS, StageError, Workdir, load_resources, load_split, resolve_threads, run_pipeline, stage_features,
    stage_resources, stage_select, stage_synth, train_model,
)
from .segmentation import overseg_ladder
from .volume import load_volume, save_volume

log = logging.getLogger("voxmerge")

POOL_BLOCKS = {"midpoint": "unsup-midpoint", "static-all": "unsup-all", "dyn-obj": "unsup-dyn-obj",
               "dyn-bnd": "unsup-dyn-bnd"}


def expand_names(spec: str, cfg: dict) -> list[str]:
    """Comma-separated feature-set and block names, flattened to unique block names in order."""
    out = []
    for tok in (t.strip() for t in spec.split(",")):
        if not tok:
            continue
        if tok in cfg["sets"]:
            out.extend(cfg["sets"][tok])
        elif tok in BLOCKS:
            out.append(tok)
        else:
            raise StageError("features", f"{tok!r} is neither a feature set nor a block "
                                         f"(sets: {sorted(cfg['sets'])}; blocks: {sorted(BLOCKS)})")
    return list(dict.fromkeys(out))


def _splits(arg: str) -> tuple:
    return SPLITS if arg == "both" else (arg,)


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args, cfg):
    out = stage_synth(Workdir(args.work, cfg), args.seeds)
    print(json.dumps(out, sort_keys=True))


def cmd_overseg(args, cfg):
    s = cfg["synth"]
    aff = load_volume(args.aff)
    seg = overseg_ladder(aff, tuple(s["ladder"]), s["final_grow"], not args.no_break, s["min_volume"],
                         s["saddle_ratio"])
    save_volume(seg.astype(np.uint32), args.out)
    print(f"{int(seg.max())} segments")


def cmd_edges(args, cfg):
    if args.seg:
        if not (args.gt and args.out):
            raise StageError("edges", "--seg needs --gt and --out")
        seg = load_volume(args.seg).astype(np.int64)
        gt = load_volume(args.gt).astype(np.int64)
        ds = label_edges(seg, gt, find_adjacent_pairs(seg), cfg["synth"]["purity"], cfg["synth"]["window_radius"],
                         index=SegmentIndex(seg))
        ds.save(args.out)
        print(json.dumps(ds.counts, sort_keys=True))
        return
    if not args.work:
        raise StageError("edges", "give --work, or --seg/--gt/--out")
    print(json.dumps(stage_select(Workdir(args.work, cfg)), sort_keys=True))


def cmd_dict_learn(args, cfg):
    print(json.dumps(stage_resources(Workdir(args.work, cfg), args.threads, which=("dicts",))))


def cmd_codebook_learn(args, cfg):
    print(json.dumps(stage_resources(Workdir(args.work, cfg), args.threads, which=("codebooks",))))


def _write_features(work, split, names, out, threads):
    fm = stage_features(work, split, names, threads)
    path = Path(out.format(split=split)) if out else work.path("features", f"{split}.fmat")
    path.parent.mkdir(parents=True, exist_ok=True)
    fm.save(path)
    print(f"{path}: {fm.rows} rows x {fm.values.shape[1]} columns ({', '.join(fm.names)})")


def _check_out(args):
    if args.out and args.split == "both" and "{split}" not in args.out:
        raise StageError(args.command, "--out must contain {split} when both splits are written")


def cmd_features(args, cfg):
    work = Workdir(args.work, cfg)
    names = expand_names(args.set, cfg)
    _check_out(args)
    for split in _splits(args.split):
        _write_features(work, split, names, args.out, args.threads)


def cmd_encode(args, cfg):
    work = Workdir(args.work, cfg)
    _check_out(args)
    for split in _splits(args.split):
        _write_features(work, split, [POOL_BLOCKS[args.pool]], args.out, args.threads)


def cmd_augment(args, cfg):
    ds = EdgeDataset.load(args.edges)
    kinds = [k for k in args.kinds.split(",") if k]
    shape = tuple(args.dims) if args.dims else None
    aug = augment_dataset(ds, kinds, shape)
    if args.out:
        aug.materialize().save(args.out)
    print(json.dumps({"base": len(ds), "kinds": list(aug.kinds), "multiplicity": aug.multiplicity,
                      "augmented": len(aug)}))


def _load_pair(args, cfg, split_default="train"):
    """Feature matrix and labels, with provenance checks against the working directory."""
    fm = FeatureMatrix.load(args.features)
    if args.work:
        work = Workdir(args.work, cfg)
        split = args.split or split_default
        expected = work.dataset_hash(split)
        if fm.dataset_hash != expected:
            raise StageError(args.command, f"feature matrix dataset hash {fm.dataset_hash} does not match "
                                           f"{split} dataset {expected}")
        ds = EdgeDataset.load(work.edges_file(split))
    elif args.edges:
        ds = EdgeDataset.load(args.edges)
    else:
        raise StageError(args.command, "give --work (with --split) or --edges for labels")
    if len(ds) != fm.rows:
        raise StageError(args.command, f"feature matrix has {fm.rows} rows but the dataset has {len(ds)} edges")
    return fm, ds


def cmd_train(args, cfg):
    fm, ds = _load_pair(args, cfg, "train")
    model = train_model(fm.values, ds.y, args.model, cfg)
    model.meta = {"blocks": [[n, k] for n, k in fm.blocks], "config_hash": fm.config_hash,
                  "train_dataset_hash": fm.dataset_hash, "augment": []}
    model.save(args.out)
    print(f"{args.out}: trained {args.model} on {fm.rows} rows x {fm.values.shape[1]} columns")


def _scores(args, cfg):
    if args.scores:
        if not args.edges:
            raise StageError(args.command, "--scores needs --edges for labels")
        ds = EdgeDataset.load(args.edges)
        scores = np.loadtxt(args.scores, ndmin=1)
        if scores.size != len(ds):
            raise StageError(args.command, f"{scores.size} scores for {len(ds)} edges")
        return scores, ds.y
    if not (args.model and args.features):
        raise StageError(args.command, "give --scores, or --model and --features")
    fm, ds = _load_pair(args, cfg, "test")
    model = load_model(args.model)
    meta = model.meta or {}
    if meta.get("config_hash") and meta["config_hash"] != fm.config_hash:
        raise StageError(args.command, "feature matrix was built with a different configuration than the model "
                                       f"({fm.config_hash} vs {meta['config_hash']})")
    if meta.get("blocks") and [list(b) for b in meta["blocks"]] != [[n, k] for n, k in fm.blocks]:
        raise StageError(args.command, "feature blocks differ from those the model was trained on")
    return predict(model, fm.values), ds.y


def cmd_eval(args, cfg):
    scores, y = _scores(args, cfg)
    rep = metrics_report(scores, y)
    if args.out:
        write_json(rep, args.out)
    print(json.dumps(rep, sort_keys=True))


def cmd_pr(args, cfg):
    scores, y = _scores(args, cfg)
    curve = pr_curve(scores, y)
    write_pr_csv(curve, args.out)
    print(f"{args.out}: {len(curve)} points")


def cmd_bench(args, cfg):
    work = Workdir(args.work, cfg)
    vols, ds = load_split(work, args.split)
    res = load_resources(work)
    names = expand_names(args.set, cfg)
    edges = [ds[i] for i in range(min(args.edges, len(ds)))]

    def feature(name):
        # a fresh context per call so no block reuses another's memoised work
        return lambda e: compute_block(name, EdgeContext(vols, e), res)

    table = cost_benchmark([(n, feature(n)) for n in names], edges, repeats=args.repeats)
    rows = [{"feature": n, "cost": c} for n, c in table]
    if args.out:
        write_json(rows, args.out)
    for r in rows:
        print(f"{r['feature']:16s} {r['cost']:8.2f}")


def cmd_run(args, cfg):
    work = Workdir(args.work, cfg)
    exps = [e for e in args.experiments.split(",") if e] if args.experiments else None
    unknown = [e for e in exps or [] if e not in cfg["experiments"]]
    if unknown:
        raise StageError("run", f"unknown experiments {unknown}")
    run_pipeline(work, args.threads, exps)
    print((work.root / "report.md").read_text(), end="")


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def options(sub_level: bool) -> argparse.ArgumentParser:
        # subcommand copies must not overwrite values given before the subcommand
        d = {"default": argparse.SUPPRESS} if sub_level else {}
        o = argparse.ArgumentParser(add_help=False)
        o.add_argument("--config", help="JSON config overriding the defaults", **d)
        o.add_argument("--threads", type=int, help="worker processes (VOXMERGE_THREADS overrides)", **d)
        o.add_argument("-v", "--verbose", action="store_true", **d)
        return o

    common = options(True)
    p = argparse.ArgumentParser(prog="voxmerge", description=__doc__.splitlines()[0], parents=[options(False)])
    p.add_argument("--version", action="version", version=f"voxmerge {__version__}")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, fn, help_, work=True):
        sp = sub.add_parser(name, help=help_, parents=[common])
        if work:
            sp.add_argument("--work", required=True, help="working directory")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", cmd_synth, "generate the train/test volumes, oversegmentations and edge lists")
    sp.add_argument("--seeds", type=int, nargs=2)

    sp = add("overseg", cmd_overseg, "oversegment an affinity graph (VOL1 in, u32 VOL1 out)", work=False)
    sp.add_argument("--aff", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-break", action="store_true", help="skip the distance-transform split")

    sp = add("edges", cmd_edges, "label adjacent pairs, or select each split's working edges", work=False)
    sp.add_argument("--work")
    sp.add_argument("--seg")
    sp.add_argument("--gt")
    sp.add_argument("--out")

    add("dict-learn", cmd_dict_learn, "learn OMP-1 patch dictionaries from training edges")
    add("codebook-learn", cmd_codebook_learn, "learn shape-context and SIFT codebooks from training edges")

    sp = add("features", cmd_features, "build (cached) feature matrices")
    sp.add_argument("--set", required=True, help="comma-separated feature sets and/or blocks")
    sp.add_argument("--split", choices=SPLITS + ("both",), default="both")
    sp.add_argument("--out", help="output FMAT1 path; may contain {split}")

    sp = add("encode", cmd_encode, "pooled unsupervised encodings for one pooling kind")
    sp.add_argument("--pool", required=True, choices=sorted(POOL_BLOCKS))
    sp.add_argument("--split", choices=SPLITS + ("both",), default="both")
    sp.add_argument("--out", help="output FMAT1 path; may contain {split}")

    sp = add("augment", cmd_augment, "count or materialise an augmented edge set", work=False)
    sp.add_argument("--edges", required=True)
    sp.add_argument("--kinds", default="swap,isometry,jitter")
    sp.add_argument("--dims", type=int, nargs=3, help="volume dims for clamping jittered points")
    sp.add_argument("--out", help="write the materialised set as JSONL")

    for name, fn, help_ in (("train", cmd_train, "train a classifier on a feature matrix"),
                            ("eval", cmd_eval, "ACC/AUC report for a model or a score file"),
                            ("pr", cmd_pr, "precision-recall curve as CSV")):
        sp = add(name, fn, help_, work=False)
        sp.add_argument("--features", help="FMAT1 file")
        sp.add_argument("--work", help="working directory supplying labels and provenance")
        sp.add_argument("--split", choices=SPLITS)
        sp.add_argument("--edges", help="JSONL labels when no working directory is given")
        if name == "train":
            sp.add_argument("--model", choices=("mlp", "mlp2", "boost"), default="mlp")
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--model", help="MODEL1 file")
            sp.add_argument("--scores", help="text file with one score per edge")
            sp.add_argument("--out", required=(name == "pr"))

    sp = add("bench", cmd_bench, "relative per-edge cost of feature blocks")
    sp.add_argument("--set", default="all-hand")
    sp.add_argument("--split", choices=SPLITS, default="train")
    sp.add_argument("--edges", type=int, default=20)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--out")

    sp = add("run", cmd_run, "whole pipeline and the experiment report")
    sp.add_argument("--experiments", help="comma-separated subset of configured experiments")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    logging.getLogger("voxmerge").setLevel(logging.INFO)
    stage = args.command or "config"
    try:
        cfg = load_config(args.config)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            print("voxmerge: error: a subcommand is required", file=sys.stderr)
            return 2
        args.threads = resolve_threads(args.threads if args.threads is not None else cfg.get("threads", 1))
        args.fn(args, cfg)
    except StageError as exc:
        print(f"voxmerge: stage {exc.stage} failed: {exc}", file=sys.stderr)
        return 1
    except (VoxmergeError, OSError, ValueError, KeyError) as exc:
        print(f"voxmerge: stage {stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
