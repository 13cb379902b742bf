"""Acceptance suite: one printed PASS/FAIL line per criterion.

Criterion 6 runs the whole pipeline with ``configs/desk.json`` (two 128^3
volumes, 1600 edges per split, K=64, 20k MLP updates) and takes
most of the 45 minute budget on one core.  Set ``VOXMERGE_DESK_WORK`` to
a directory to keep (and on later runs resume) that working directory;
otherwise a temporary one is used.  ``VOXMERGE_SKIP_DESK=1`` skips it.
"""
import hashlib
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from voxmerge.augment import Isometry, apply_isometry, augment_dataset, isometry_group
from voxmerge.config import load_config
from voxmerge.edges import EdgeDataset, EdgeSample, compute_decision_point, find_adjacent_pairs, interface_pixels
from voxmerge.evaluation import pr_curve, roc_auc
from voxmerge.features import boundary as fb
from voxmerge.features import geometry as fg
from voxmerge.features import levelset as fl
from voxmerge.features.blocks import HAND_BLOCKS, EdgeContext, Resources, VolumeSet, block_length, compute_block
from voxmerge.learn.dictionary import omp1_train
from voxmerge.learn.endtoend import end_to_end_vector
from voxmerge.learn.kmeans import kmeans_train
from voxmerge.learn.pooling import make_pool_region
from voxmerge.model import forward_backward, init_mlp
from voxmerge.pipeline import Workdir, resolve_threads, run_pipeline
from voxmerge.volume import SubvolumeSpec

from conftest import random_labels
from fixtures import TINY_CONFIG, tube_scene
from test_blocks import EXPECTED, full_resources
from test_edges import brute_decision, brute_interface, brute_pairs
from test_evaluation import brute_pr
from test_features import brute_hull, sorted_stats_oracle

LINES = {}

# trend margins, in AUC points
HAND_MARGIN = 2.0
DYN_MARGIN = 1.0
COMBINED_SLACK = 0.2
DESK_BUDGET_S = 45 * 60
MIN_EDGES = 1500
DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    write = tr.write_line if tr else print
    write("")
    write("acceptance summary")
    for k in sorted(LINES):
        write(LINES[k])


def record(n, ok, detail):
    LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, LINES[n]


# ---------------------------------------------------------------- 1: dimensions


def test_criterion_1_dimensions(rng):
    t0 = time.perf_counter()
    res = full_resources(rng)
    ok = all(block_length(n, res) == k for n, k in EXPECTED.items())
    # computed vectors, not just declared lengths
    vols, edges = tube_scene(3)
    e = edges[0]
    ctx = EdgeContext(vols, e)
    for name in HAND_BLOCKS:
        ok &= compute_block(name, ctx, res).shape == (EXPECTED[name],)
    mid = compute_block("unsup-midpoint", ctx, res).size
    dyn = compute_block("unsup-dyn-obj", ctx, res).size + compute_block("unsup-dyn-bnd", ctx, res).size
    img, bm = vols.image, vols.bm
    a, b = vols.seg == e.a, vols.seg == e.b
    e1 = end_to_end_vector(img, bm, a, b, e.dp, ((5, 1),)).size
    e2 = end_to_end_vector(img, bm, a, b, e.dp, ((5, 1), (10, 2))).size
    ok &= (mid, dyn, e1, e2) == (8000, 16000, 5324, 10648)
    record(1, ok, f"e2e {e1}/{e2}, unsup mid {mid}, dyn {dyn} (K=1000), hand blocks "
                  f"{sum(EXPECTED[n] for n in HAND_BLOCKS)} columns; {time.perf_counter() - t0:.1f}s")


# ---------------------------------------------------------------- 2: augmentation counts


def test_criterion_2_augmentation_counts():
    ds = EdgeDataset([EdgeSample(i, 1, 2, (5, 5, 5), "pos" if i % 2 else "neg") for i in range(14552)], "train")
    counts = {k: augment_dataset(ds, [k]).multiplicity for k in ("swap", "isometry", "jitter")}
    allaug = augment_dataset(ds, ["swap", "isometry", "jitter"])
    ok = counts == {"swap": 2, "isometry": 16, "jitter": 27} and allaug.multiplicity == 864
    ok &= len(allaug) == 12_572_928
    record(2, ok, f"multiplicities {counts}, combined x{allaug.multiplicity}, 14552 -> {len(allaug)} (lazy)")


# ---------------------------------------------------------------- 3: group


def test_criterion_3_group(rng):
    t0 = time.perf_counter()
    G = isometry_group()
    mats = {g.matrix.tobytes(): g for g in G}
    ok = len(G) == 16 and len(mats) == 16
    table = 0
    for g, h in itertools.product(G, G):
        gh = g.compose(h)
        ok &= gh in G
        ok &= np.array_equal(gh.matrix, g.matrix @ h.matrix)
        table += 1
    ident = Isometry(0, False, False)
    ok &= all(g.compose(g.inverse()) == ident for g in G)
    vol = rng.random((5, 5, 7)).astype(np.float32)
    for g in G:
        ok &= np.array_equal(apply_isometry(apply_isometry(vol, g), g.inverse()), vol)
    record(3, ok, f"{len(G)} elements, {table}-pair composition table, inverses bit-exact; "
                  f"{time.perf_counter() - t0:.1f}s")


# ---------------------------------------------------------------- 4: oracles


def _oracle_sweeps():
    """(name, fixtures, max error) for each operation against its brute-force oracle."""
    out = []
    rng = np.random.default_rng(2024)

    err = 0.0
    for _ in range(100):
        v = rng.random(int(rng.integers(3, 60)))
        err = max(err, float(np.max(np.abs(fb.summary_stats(v) - sorted_stats_oracle(v)))))
    out.append(("boundary statistics", 100, err, 1e-12))

    err = 0.0
    for _ in range(100):
        bm = rng.random((7, 7, 7))
        pts = np.argwhere(rng.random((5, 5, 5)) < 0.3) + 1
        if len(pts) < 3:
            pts = np.array([[3, 3, 3], [2, 4, 3], [4, 4, 4]])
        grad, lap = [], []
        for p in pts:
            g = [(bm[tuple(p + o)] - bm[tuple(p - o)]) / 2 for o in np.eye(3, dtype=int)]
            grad.append(np.sqrt(sum(c * c for c in g)))
            lap.append(sum(bm[tuple(p + o)] + bm[tuple(p - o)] for o in np.eye(3, dtype=int)) - 6 * bm[tuple(p)])
        want = np.concatenate([sorted_stats_oracle(grad), sorted_stats_oracle(lap)])
        err = max(err, float(np.max(np.abs(fb.derivative_stats(bm, pts) - want))))
    out.append(("derivative statistics", 100, err, 1e-12))

    err = 0.0
    for _ in range(100):
        seg = random_labels(rng, (6, 6, 6), 6, 0.4)
        err = max(err, float(find_adjacent_pairs(seg) != brute_pairs(seg)))
    out.append(("adjacent pairs", 100, err, 1e-9))

    err, n = 0.0, 0
    while n < 100:
        seg = random_labels(rng, (7, 6, 5), 3, 0.6)
        present = sorted(set(np.unique(seg).tolist()) - {0})
        if len(present) < 2:
            continue
        a, b = present[:2]
        mid, d = brute_decision(seg, a, b)
        got = compute_decision_point(seg, a, b)
        err = max(err, float(got.point != mid), abs(got.distance - d))
        n += 1
    out.append(("decision point", 100, err, 1e-9))

    err = 0.0
    for _ in range(100):
        seg = random_labels(rng, (7, 7, 7), 3, 0.3)
        win = SubvolumeSpec(tuple(int(v) for v in rng.integers(0, 7, 3)), int(rng.integers(1, 4)), 1)
        err = max(err, float(not np.array_equal(interface_pixels(seg, 1, 2, win), brute_interface(seg, 1, 2, win))))
    out.append(("interface detection", 100, err, 1e-9))

    err, n = 0.0, 0
    while n < 100:
        a = rng.random((6, 6, 6)) < 0.08
        b = (rng.random((6, 6, 6)) < 0.08) & ~a
        if not a.any() or not b.any():
            continue
        d = min(np.linalg.norm(p - q) for p in np.argwhere(a) for q in np.argwhere(b))
        err = max(err, abs(float(fg.proximity_feature(a, b)[0]) - d))
        n += 1
    out.append(("proximity", 100, err, 1e-9))

    err, n = 0.0, 0
    while n < 100:
        shape = (7, 7, 7)
        mask = rng.random(shape) < 0.04
        pts = np.argwhere(mask)
        try:
            want = brute_hull(pts, shape)
        except Exception:  # coplanar draws have no 3D hull for the oracle
            continue
        f = fg.convex_hull_features(mask, mask)
        err = max(err, abs(f[0] - (want & mask).sum()), abs(f[1] - (want & ~mask).sum()))
        n += 1
    out.append(("convex hull counts", 100, err, 1e-9))

    err = 0.0
    for _ in range(100):
        shape = (13, 13, 13)
        a = ndimage.binary_dilation(rng.random(shape) < 0.01, iterations=2)
        b = ndimage.binary_dilation(rng.random(shape) < 0.01, iterations=2) & ~a
        c = tuple(int(v) for v in rng.integers(2, 11, 3))
        r = int(rng.integers(2, 7))
        cube = [p for p in itertools.product(*(range(s) for s in shape)) if max(abs(i - j) for i, j in zip(p, c)) <= r]
        pa, pb = np.argwhere(a), np.argwhere(b)

        def near(p, pts):
            return len(pts) > 0 and ((pts - p) ** 2).sum(axis=1).min() <= (r / 2) ** 2

        want = {
            "static-all": cube,
            "dyn-obj": [p for p in cube if a[p] or b[p]],
            "dyn-bnd": [p for p in cube if near(p, pa) and near(p, pb)],
        }
        for kind, pts in want.items():
            got = [tuple(p) for p in make_pool_region(a, b, c, kind, r)]
            err = max(err, float(got != pts))
    out.append(("pooling regions", 100, err, 1e-9))

    err = 0.0
    for _ in range(100):
        s = np.round(rng.random(120), 2)
        y = rng.integers(0, 2, 120)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        pos, neg = s[y == 1], s[y == 0]
        pairs = np.sum((pos[:, None] > neg[None]) + 0.5 * (pos[:, None] == neg[None]))
        err = max(err, abs(roc_auc(s, y) - pairs / (len(pos) * len(neg))))
    out.append(("AUC", 100, err, 1e-12))

    err = 0.0
    for _ in range(100):
        s = np.round(rng.random(60), 1)
        y = rng.integers(0, 2, 60)
        if y.sum() == 0:
            y[0] = 1
        err = max(err, float(np.max(np.abs(pr_curve(s, y)[:, :2] - brute_pr(s, y)))))
    out.append(("PR curve", 100, err, 1e-12))
    return out


def test_criterion_4_oracles():
    t0 = time.perf_counter()
    sweeps = _oracle_sweeps()
    secs = time.perf_counter() - t0
    ok = all(n >= 100 and e <= tol for _, n, e, tol in sweeps) and secs < 300
    bad = [f"{name} err {e:.2g} > {tol:g}" for name, _, e, tol in sweeps if e > tol]
    record(4, ok, f"{len(sweeps)} operations x 100 fixtures, worst errors within tolerance"
                  f"{'; ' + ', '.join(bad) if bad else ''}; {secs:.1f}s")


# ---------------------------------------------------------------- 5: numerical suites


def test_criterion_5_numerics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    ws, bs = init_mlp([6, 8, 5, 1], seed=2, dtype=np.float64)
    x = rng.normal(size=(11, 6))
    y = rng.integers(0, 2, 11)
    _, gw, gb = forward_backward(ws, bs, x, y)
    h = 1e-6
    for arrs, grads in ((ws, gw), (bs, gb)):
        for i, arr in enumerate(arrs):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = forward_backward(ws, bs, x, y)[0]
                arr[idx] = old - h
                down = forward_backward(ws, bs, x, y)[0]
                arr[idx] = old
                num, ana = (up - down) / (2 * h), grads[i][idx]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    grad_ok = worst < 1e-4

    omp = omp1_train(rng.normal(size=(400, 30)), 12, seed=1, iters=12).objective
    km = kmeans_train(rng.normal(size=(400, 5)), 10, seed=1).inertia
    mono_ok = all(b <= a + 1e-9 for a, b in zip(omp, omp[1:])) and all(b <= a + 1e-9 for a, b in zip(km, km[1:]))

    gvf_ok = True
    for k in range(5):
        bm = ndimage.gaussian_filter(rng.random((16, 16, 16)), 1.0)
        _, _, res = fl.gvf_field(bm, iters=60, trace=True)
        gvf_ok &= all(b <= a + 1e-12 for a, b in zip(res[5:], res[6:]))

    shape = (30, 14, 14)
    seed = np.zeros(shape, bool)
    seed[5:11, 4:10, 4:10] = True
    vel, zero = np.zeros((3,) + shape), np.zeros((3,) + shape)
    vel[0] = 1.0
    steps, dt = 20, 0.5
    moved = fl.evolve_level_set(seed, vel, zero, w_gvf=0.0, steps=steps, dt=dt, erode=False)
    shift = np.argwhere(moved)[:, 0].mean() - np.argwhere(seed)[:, 0].mean()
    ls_err = abs(shift - steps * dt)
    ls_ok = ls_err <= 1.0

    secs = time.perf_counter() - t0
    record(5, grad_ok and mono_ok and gvf_ok and ls_ok and secs < 300,
           f"gradient check max rel err {worst:.1e}; OMP-1 and k-means monotone {mono_ok}; "
           f"GVF residual non-increasing after step 5 {gvf_ok}; level-set centroid error {ls_err:.2f} voxel; "
           f"{secs:.1f}s")


# ---------------------------------------------------------------- 6: trends


@pytest.mark.skipif(os.environ.get("VOXMERGE_SKIP_DESK") == "1", reason="VOXMERGE_SKIP_DESK=1")
def test_criterion_6_trends(tmp_path_factory):
    root = os.environ.get("VOXMERGE_DESK_WORK")
    root = Path(root) if root else tmp_path_factory.mktemp("desk")
    work = Workdir(root, load_config(DESK_CONFIG))
    t0 = time.perf_counter()
    rep = run_pipeline(work, resolve_threads(None))
    secs = time.perf_counter() - t0
    auc = {k: 100 * r["auc"] for k, r in rep["experiments"].items()}
    edges = {s: c["pos"] + c["neg"] for s, c in rep["edges"].items()}
    trends = {
        "i": auc["all-hand"] - auc["baseline"] >= HAND_MARGIN,
        "ii": auc["unsup-dyn"] - auc["unsup-mid"] >= DYN_MARGIN,
        "iii": auc["e2e-aug"] > auc["e2e"],
        "iv": auc["combined"] >= max(auc["all-hand"], auc["unsup-dyn"]) - COMBINED_SLACK,
    }
    ok = all(trends.values()) and min(edges.values()) >= MIN_EDGES and secs <= DESK_BUDGET_S
    detail = ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in trends.items())
    record(6, ok, f"trends {detail}; AUC " + " ".join(f"{k} {v:.2f}" for k, v in auc.items())
                  + f"; edges {edges}; {secs / 60:.1f} min")


# ---------------------------------------------------------------- 7: determinism


def _artifact_hashes(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.json"}


def test_criterion_7_determinism(tmp_path):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    cfg = load_config(cfg_path)
    t0 = time.perf_counter()
    hashes = []
    for i, threads in enumerate((1, 1, 2)):
        root = tmp_path / f"run{i}"
        run_pipeline(Workdir(root, cfg), threads)
        hashes.append(_artifact_hashes(root))
    same = hashes[0] == hashes[1] == hashes[2]
    diff = sorted(k for k in set(hashes[0]) | set(hashes[2]) if hashes[0].get(k) != hashes[2].get(k))
    record(7, same and len(hashes[0]) > 20,
           f"{len(hashes[0])} artifacts byte-identical over runs with threads 1, 1, 2 on the reduced configuration"
           f"{'; differing: ' + ', '.join(diff[:5]) if diff else ''}; {time.perf_counter() - t0:.0f}s")
