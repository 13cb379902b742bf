import itertools

import numpy as np
import pytest

from voxmerge.augment import (
    AugmentedDataset, Isometry, apply_isometry, apply_isometry_affinity, apply_isometry_field, augment_dataset,
    from_matrix, isometry_group, jitter_points, swap_edge,
)
from voxmerge.edges import EdgeDataset, EdgeSample

GROUP = isometry_group()


def move(g, p, n):
    c = (n - 1) / 2.0
    return tuple(int(round(v)) for v in g.matrix @ (np.asarray(p) - c) + c)


def test_group_order_identity_closure_inverse():
    assert len(GROUP) == 16 and len(set(GROUP)) == 16
    assert GROUP[0] == Isometry() and np.array_equal(GROUP[0].matrix, np.eye(3))
    pts = np.array(list(itertools.product(range(3), repeat=3)))
    for g, h in itertools.product(GROUP, GROUP):
        gh = g.compose(h)
        assert gh in GROUP
        # action on coordinates agrees with composition
        assert np.array_equal(pts @ gh.matrix.T, (pts @ h.matrix.T) @ g.matrix.T)
    for g in GROUP:
        assert g.compose(g.inverse()) == GROUP[0]
    for g, h, k in itertools.product(GROUP[::3], GROUP[1::4], GROUP[2::5]):
        assert g.compose(h).compose(k) == g.compose(h.compose(k))
    with pytest.raises(ValueError):
        from_matrix(np.diag([1, -1, 1]) @ np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]]))


def test_apply_identity_rotation_inverse(rng):
    v = rng.random((5, 5, 4))
    assert np.array_equal(apply_isometry(v, 0), v)
    r1 = Isometry(1)
    out = v
    for _ in range(4):
        out = apply_isometry(out, r1)
    assert np.array_equal(out, v)
    for g in GROUP:
        assert np.array_equal(apply_isometry(apply_isometry(v, g), g.inverse()), v)
    with pytest.raises(ValueError):
        apply_isometry(rng.random((4, 5, 5)), Isometry(1))


def test_apply_voxel_remap_oracle(rng):
    n = 5
    v = rng.random((n, n, n))
    for g in GROUP:
        out = apply_isometry(v, g)
        for p in itertools.product(range(n), repeat=3):
            assert out[move(g, p, n)] == v[p]


def test_affinity_remap_oracle(rng):
    n = 5
    aff = rng.random((3, n, n, n)).astype(np.float32)
    for g in GROUP:
        out = apply_isometry_affinity(aff, g)
        for c in range(3):
            for p in itertools.product(range(n), repeat=3):
                q = list(p)
                q[c] += 1
                if q[c] >= n:
                    continue
                u, w = move(g, p, n), move(g, q, n)
                k = int(np.flatnonzero(np.subtract(w, u))[0])
                lo = min(u, w)
                assert out[(k,) + lo] == aff[(c,) + p]
        assert np.array_equal(apply_isometry_affinity(out, g.inverse()), aff)


def test_field_covariant(rng):
    n = 4
    f = rng.random((3, n, n, n))
    for g in GROUP:
        out = apply_isometry_field(f, g)
        for p in itertools.product(range(n), repeat=3):
            assert np.allclose(out[(slice(None),) + move(g, p, n)], g.matrix @ f[(slice(None),) + p])


def test_jitter():
    pts = jitter_points((5, 5, 5))
    assert len(pts) == 27 == len(set(pts)) and (5, 5, 5) in pts
    clamped = jitter_points((0, 0, 0), shape=(4, 4, 4))
    assert len(clamped) == 27 and min(min(p) for p in clamped) == 0


def test_swap_involution():
    e = EdgeSample(3, 2, 9, (1, 2, 3), "neg")
    s = swap_edge(e)
    assert (s.a, s.b, s.label) == (9, 2, "neg") and swap_edge(s) == e


def base_dataset(n):
    return EdgeDataset([EdgeSample(i, i + 1, i + 2, (5, 5, 5), "pos" if i % 2 else "neg") for i in range(n)], "train")


def test_augmentation_counts():
    ds = base_dataset(14552)
    assert len(augment_dataset(ds, ["swap", "isometry", "jitter"])) == 12_572_928
    assert len(augment_dataset(ds, ["isometry"])) == 232_832
    assert len(augment_dataset(ds, [])) == 14552
    with pytest.raises(ValueError):
        augment_dataset(ds, ["elastic"])


def test_lazy_items_and_shards():
    ds = base_dataset(3)
    aug = AugmentedDataset(ds, ["jitter", "swap", "isometry"], shape=(10, 10, 10))
    items = list(aug)
    assert len(items) == 3 * 864 and len({e.id for e in items}) == len(items)
    assert items[0] == EdgeSample(0, 1, 2, (5, 5, 5), "neg", isometry=0, jitter=(-1, -1, -1))
    assert all(e.label == ds[e.id // 864].label for e in items)
    combos = {(e.swapped, e.isometry, e.jitter) for e in items[:864]}
    assert len(combos) == 864
    shards = [list(aug.shard(i, 4)) for i in range(4)]
    merged = sorted((e for s in shards for e in s), key=lambda e: e.id)
    assert merged == items
    assert augment_dataset(ds, [], materialize=True).edges == ds.edges
