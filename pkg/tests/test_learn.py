import itertools

import numpy as np
import pytest

from voxmerge.errors import StateError
from voxmerge.learn.dictionary import (
    DictPair, Dictionary, EncoderConfig, extract_patches, normalize_patches, omp1_train, soft_threshold_codes,
)
from voxmerge.learn.endtoend import end_to_end_length, end_to_end_vector
from voxmerge.learn.kmeans import Codebook, kmeans_train, triangle_encode
from voxmerge.learn.pooling import ChannelWindow, encode_location, make_pool_region, pooled_feature


# ---------------------------------------------------------------- k-means


def test_kmeans_k_equals_n(rng):
    x = rng.normal(size=(6, 3))
    cb = kmeans_train(x, 6, seed=1)
    assert sorted(map(tuple, cb.centroids)) == sorted(map(tuple, x))
    assert cb.inertia[-1] == pytest.approx(0, abs=1e-12)


def test_kmeans_blobs_and_monotone(rng):
    a = rng.normal(0, 0.1, (200, 2))
    b = rng.normal(0, 0.1, (200, 2)) + [5, 5]
    cb = kmeans_train(np.vstack([a, b]), 2, seed=0)
    got = sorted(map(tuple, cb.centroids))
    assert np.allclose(got[0], a.mean(0), atol=0.1) and np.allclose(got[1], b.mean(0), atol=0.1)
    cb = kmeans_train(rng.normal(size=(300, 4)), 8, seed=2)
    assert all(n <= p + 1e-9 for p, n in zip(cb.inertia, cb.inertia[1:]))
    with pytest.raises(ValueError):
        kmeans_train(np.zeros((3, 2)), 4)


def test_kmeans_deterministic(rng):
    x = rng.normal(size=(100, 5))
    assert np.array_equal(kmeans_train(x, 5, seed=4).centroids, kmeans_train(x, 5, seed=4).centroids)


def test_codebook_roundtrip(tmp_path, rng):
    cb = Codebook(rng.normal(size=(4, 3)).astype(np.float32).astype(np.float64), seed=9)
    cb.save(tmp_path / "c.codebook")
    back = Codebook.load(tmp_path / "c.codebook")
    assert np.array_equal(back.centroids, cb.centroids) and back.seed == 9
    with pytest.raises(StateError):
        triangle_encode(np.zeros(3), Codebook())


# ---------------------------------------------------------------- patches and OMP-1


def test_extract_patch_counts():
    assert extract_patches(np.random.default_rng(0).random((3, 5, 5, 5))).shape == (1, 375)
    assert extract_patches(np.random.default_rng(0).random((3, 9, 9, 9))).shape[0] == 125
    assert extract_patches(np.random.default_rng(0).random((3, 10, 10, 10)), scale=2).shape[0] == 1
    assert np.all(extract_patches(np.ones((3, 5, 5, 5))) == 0)
    with pytest.raises(ValueError):
        extract_patches(np.ones((3, 4, 5, 5)))


def test_omp1_identical_patches():
    v = np.zeros(10)
    v[3] = 1.0
    d = omp1_train(np.tile(v, (20, 1)), 3, seed=0, iters=5)
    assert np.isclose(np.abs(d.atoms @ v), 1).any()
    assert d.objective[-1] == pytest.approx(0, abs=1e-12)
    assert np.allclose(np.linalg.norm(d.atoms, axis=1), 1)


def test_omp1_monotone_and_two_directions(rng):
    d = omp1_train(rng.normal(size=(500, 20)), 16, seed=3, iters=10)
    assert all(n <= p + 1e-9 for p, n in zip(d.objective, d.objective[1:]))
    e1, e2 = np.eye(8)[0], np.eye(8)[1]
    x = np.vstack([np.outer(rng.normal(size=50), e1), np.outer(rng.normal(size=50), e2)])
    x += rng.normal(0, 0.02, x.shape)
    d = omp1_train(x, 2, seed=1, iters=10)
    dots = np.abs(d.atoms @ np.stack([e1, e2]).T)
    assert dots.max(axis=0).min() >= 0.95
    with pytest.raises(ValueError):
        omp1_train(x[:1], 2)


# ---------------------------------------------------------------- encoding and pooling


def make_dicts(rng, K=6, channels=3, patch=5, alpha=0.25):
    P = channels * patch**3
    atoms = {}
    for s in (1, 2):
        a = rng.normal(size=(K, P))
        atoms[s] = Dictionary(a / np.linalg.norm(a, axis=1, keepdims=True))
    return DictPair(atoms, alpha)


def brute_encode(vol, p, dicts, cfg):
    """Direct per-location encoding: pad with zeros, block-mean, crop, normalise, threshold, max-pool."""
    out = []
    pad = 40
    big = np.pad(vol, ((0, 0),) + ((pad, pad),) * 3)
    for s in cfg.scales:
        ds = big.reshape(big.shape[0], big.shape[1] // s, s, big.shape[2] // s, s, big.shape[3] // s, s).mean(axis=(2, 4, 6))
        off = pad // s
        cell = np.asarray(p) // s + off
        h = cfg.patch // 2

        def code(c):
            x = ds[:, c[0] - h:c[0] + h + 1, c[1] - h:c[1] + h + 1, c[2] - h:c[2] + h + 1].reshape(1, -1)
            return soft_threshold_codes(normalize_patches(x), dicts[s].atoms, dicts.alpha)[0]

        centre = code(cell)
        fov = np.max([code(cell + np.array(o)) for o in itertools.product(range(-cfg.fovea, cfg.fovea + 1), repeat=3)], axis=0)
        out += [centre, fov]
    return np.concatenate(out)


def test_encode_location_oracle(rng):
    cfg = EncoderConfig(K=6)
    vol = rng.random((3, 16, 16, 16))
    dicts = make_dicts(rng)
    win = ChannelWindow(vol, (0, 0, 0))
    for p in [(8, 8, 8), (5, 9, 7), (1, 14, 3)]:
        got = encode_location(win, p, dicts, cfg)
        assert got.shape == (cfg.code_length,) == (48,)
        assert np.allclose(got, brute_encode(vol, p, dicts, cfg), atol=1e-4)
        half = cfg.K * 2
        assert np.all(got[half:2 * half] >= got[:half] - 1e-7)
        assert np.all(got >= 0)
    assert EncoderConfig(K=1000).code_length == 8000


def test_encode_orthogonal_zero(rng):
    cfg = EncoderConfig(K=2, scales=(1,), fovea=0)
    vol = np.zeros((3, 9, 9, 9))
    vol[0, :, :, :5] = 1.0  # a step along z in the image channel
    x = normalize_patches(vol[:, 2:7, 2:7, 2:7].reshape(1, -1))[0]
    a = rng.normal(size=(2, x.size))
    a -= np.outer(a @ x, x) / (x @ x)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    dicts = DictPair({1: Dictionary(a)}, 0.1)
    assert np.allclose(encode_location(ChannelWindow(vol, (0, 0, 0)), (4, 4, 4), dicts, cfg), 0, atol=1e-5)
    with pytest.raises(StateError):
        encode_location(ChannelWindow(vol, (0, 0, 0)), (4, 4, 4), DictPair({1: Dictionary()}), cfg)


def test_pool_regions():
    shape = (21, 21, 21)
    a = np.zeros(shape, bool)
    b = np.zeros(shape, bool)
    a[:10], b[10:] = True, True
    c = (10, 10, 10)
    assert make_pool_region(a, b, c, "midpoint", 10).shape == (1, 3)
    static = {tuple(p) for p in make_pool_region(a, b, c, "static-all", 4)}
    obj = {tuple(p) for p in make_pool_region(a, b, c, "dyn-obj", 4)}
    assert obj <= static and len(static) == 9**3
    bnd = make_pool_region(a, b, c, "dyn-bnd", 10)
    # brute-force: within the cube, within 5 of both slabs
    want = []
    for p in itertools.product(range(21), repeat=3):
        if max(abs(q - 10) for q in p) <= 10:
            da = max(p[0] - 9, 0)
            db = max(10 - p[0], 0)
            if da <= 5 and db <= 5:
                want.append(p)
    assert [tuple(p) for p in bnd] == want
    assert set(bnd[:, 0]) == set(range(5, 15))
    assert np.array_equal(make_pool_region(b, a, c, "dyn-bnd", 10), bnd)
    with pytest.raises(ValueError):
        make_pool_region(a, b, c, "bogus", 4)


def test_pooled_feature_oracle(rng):
    cfg = EncoderConfig(K=4)
    vol = rng.random((3, 14, 14, 14))
    dicts = make_dicts(rng, K=4)
    win = ChannelWindow(vol, (0, 0, 0))
    p = np.array([[7, 7, 7]])
    assert np.allclose(pooled_feature(win, p, dicts, cfg), encode_location(win, p[0], dicts, cfg), atol=1e-9)
    r1 = rng.integers(3, 11, (5, 3))
    r2 = rng.integers(3, 11, (3, 3))
    want = np.mean([encode_location(win, q, dicts, cfg) for q in r1], axis=0)
    f1 = pooled_feature(win, r1, dicts, cfg)
    assert np.allclose(f1, want, atol=1e-6)
    f2 = pooled_feature(win, r2, dicts, cfg)
    both = pooled_feature(win, np.vstack([r1, r2]), dicts, cfg)
    assert np.allclose(both, (5 * f1 + 3 * f2) / 8, atol=1e-9)
    assert np.all(pooled_feature(win, np.zeros((0, 3)), dicts, cfg) == 0)


def test_dict_roundtrip(tmp_path, rng):
    d = make_dicts(rng)
    for s in d.scales.values():
        s.atoms = s.atoms.astype(np.float32).astype(np.float64)
    d.save(tmp_path / "p.dict")
    back = DictPair.load(tmp_path / "p.dict")
    assert all(np.array_equal(back[s].atoms, d[s].atoms) for s in (1, 2))
    with pytest.raises(StateError):
        DictPair({1: Dictionary()}).save(tmp_path / "x.dict")


# ---------------------------------------------------------------- end-to-end vectors


def test_e2e_dims_and_swap(rng):
    assert end_to_end_length([(5, 1)]) == 5324
    assert end_to_end_length([(5, 1), (10, 2)]) == 10648
    shape = (25, 25, 25)
    img, bm = rng.random(shape), rng.random(shape)
    a = rng.random(shape) < 0.3
    b = ~a & (rng.random(shape) < 0.3)
    v = end_to_end_vector(img, bm, a, b, (12, 12, 12), [(5, 1), (10, 2)])
    assert v.shape == (10648,)
    w = end_to_end_vector(img, bm, b, a, (12, 12, 12), [(5, 1), (10, 2)])
    n = 11**3
    assert np.array_equal(v[:2 * n], w[:2 * n])
    assert np.array_equal(v[2 * n:3 * n], w[3 * n:4 * n]) and np.array_equal(v[3 * n:4 * n], w[2 * n:3 * n])
    with pytest.raises(ValueError):
        end_to_end_vector(img, bm, a[:3], b, (12, 12, 12))
